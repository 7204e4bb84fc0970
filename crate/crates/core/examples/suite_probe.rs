use std::f64::consts::PI;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let domains = helmdec_core::reference_domains(2.0 * PI).unwrap();
    let rep = helmdec_core::full_suite(&domains, 64, 129, 12.0, 7).unwrap();
    print!("{}", rep.human_lines());
    println!("elapsed: {:.1?}", t0.elapsed());
}
