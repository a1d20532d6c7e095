//! The whole pipeline through the CLI surface, writing into a temp
//! directory: synth -> preprocess -> train -> sample -> eval -> export.
//! Uses a reduced config (6 scenes, 150 training steps) so it finishes in
//! about a minute.
//!
//! ```bash
//! cargo run --release --example end_to_end
//! ```

use mmwave_sr::cli::run_args;
use mmwave_sr::io::PipelineConfig;

fn main() {
    let dir = std::env::temp_dir().join("mmwave-sr-end-to-end");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.synth.scenes = 6;
    cfg.train.steps = 150;
    let config_path = dir.join("config.toml");
    cfg.save(&config_path).unwrap();
    let cfgs = config_path.to_str().unwrap().to_owned();
    let p = |s: &str| dir.join(s).to_str().unwrap().to_owned();

    let stages: &[&[&str]] = &[
        &["synth", "--out", &p("raw"), "--config", &cfgs],
        &["preprocess", "--in", &p("raw"), "--out", &p("prep"), "--config", &cfgs],
        &["train", "--in", &p("prep"), "--out", &p("trained"), "--config", &cfgs],
        &[
            "sample",
            "--ckpt",
            &p("trained/model.ck"),
            "--in",
            &p("prep"),
            "--out",
            &p("pred"),
            "--config",
            &cfgs,
        ],
        &[
            "eval", "--pred", &p("pred"), "--truth", &p("prep"), "--out", &p("report"),
            "--config", &cfgs, "--cdf",
        ],
        &["export", "--in", &p("pred"), "--out", &p("exported")],
    ];
    for stage in stages {
        let mut args = vec!["mmwave-sr"];
        args.extend_from_slice(stage);
        let code = run_args(args);
        assert_eq!(code, 0, "stage `{}` failed", stage[0]);
    }
    println!("\nper-scene report:");
    print!(
        "{}",
        std::fs::read_to_string(dir.join("report/report.txt")).unwrap()
    );
    println!("outputs under {}", dir.display());
}
