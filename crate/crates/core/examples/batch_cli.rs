//! The JSON-lines pipeline driven in-process, as the `gridtab` binary would
//! run it.

use gridtab::cli::run;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (gt, pred, rec, report) = (p("gt.jsonl"), p("pred.jsonl"), p("rec.jsonl"), p("report.jsonl"));

    let steps: [Vec<&str>; 4] = [
        vec!["gridtab", "--deterministic", "synth", "--count", "20", "--seed", "4", "--emit", "table", "-o", &gt],
        vec!["gridtab", "--deterministic", "synth", "--count", "20", "--seed", "4", "--emit", "prediction", "--edge-flip-prob", "0.005", "-o", &pred],
        vec!["gridtab", "--deterministic", "reconstruct", "-i", &pred, "-o", &rec],
        vec!["gridtab", "--deterministic", "eval", "adjacency", "--pred", &rec, "--gt", &gt, "-o", &report],
    ];
    for argv in &steps {
        let code = run(argv.iter().copied());
        println!("{} -> exit {code}", argv[2..4].join(" "));
    }
    let text = std::fs::read_to_string(&report)?;
    println!("{}", text.lines().last().unwrap_or_default());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("example runs");
}
