fn main() {
    // Command surface lands with the pipeline modules.
    println!("helmdec: not yet wired");
}
