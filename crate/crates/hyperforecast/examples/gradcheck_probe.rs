use hyperforecast::cells::CellKind;
use hyperforecast::train::run_gradcheck;

fn main() {
    for cell in [CellKind::Gru, CellKind::Lstm] {
        let start = std::time::Instant::now();
        let report = run_gradcheck(cell, 12345, false).unwrap();
        println!(
            "{}: pass={} max_rel_err={:.3e} elapsed={:?}",
            cell.as_str(),
            report.pass,
            report.max_rel_err,
            start.elapsed()
        );
        let mut worst: Vec<_> = report.per_param.iter().collect();
        worst.sort_by(|a, b| b.max_rel_err.partial_cmp(&a.max_rel_err).unwrap());
        for p in worst.iter().take(5) {
            println!("   {:<24} {:.3e}", p.name, p.max_rel_err);
        }
    }
    // corrupted backward must fail
    let corrupted = run_gradcheck(CellKind::Gru, 12345, true).unwrap();
    println!("corrupted: pass={} (expected false)", corrupted.pass);
}
