//! Regenerates the bundled demonstration dataset `data/synthetic.csv`
//! (n = 300 subjects, p = 5 taxa, sequencing depths in [10,000, 100,000]).
//!
//! Run from the workspace root: `cargo run -p zimed --example make_synthetic`

use std::io::Write;

use zimed_core::sim::{generate_dataset, ScenarioConfig};

fn main() -> std::io::Result<()> {
    let p = 5;
    let cfg = ScenarioConfig {
        n: 300,
        p,
        pi: vec![0.2; p],
        phi: vec![1.0; p],
        beta: vec![(-3.0, 0.6, 0.5); p],
        depth_offsets: true,
        seed: 20,
        ..ScenarioConfig::default()
    };
    let (data, _) = generate_dataset(&cfg, cfg.seed);

    std::fs::create_dir_all("data")?;
    let mut f = std::fs::File::create("data/synthetic.csv")?;
    write!(f, "id,exposure,confounder,covariate,offset")?;
    for j in 1..=p {
        write!(f, ",taxon{j}")?;
    }
    writeln!(f, ",outcome")?;
    for i in 0..data.n() {
        write!(
            f,
            "{},{},{},{},{}",
            data.subject_id[i],
            data.exposure[i] as u64,
            data.c2[(i, 0)],
            data.c3[(i, 0)],
            data.offset[i] as u64
        )?;
        for j in 0..p {
            write!(f, ",{}", data.mediators[(i, j)] as u64)?;
        }
        writeln!(f, ",{}", data.outcome[i])?;
    }
    eprintln!("wrote data/synthetic.csv ({} rows)", data.n());
    Ok(())
}
