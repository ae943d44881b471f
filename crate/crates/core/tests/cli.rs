mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::parse_wav;

const TINY: &str = r#"
seed = 4

[corpus]
n_train = 40
n_eval = 6

[interpreter]
dim = 16
heads = 2
text_layers = 1
text_ff_inner = 16
joint_dim = 16
joint_ff_inner = 16

[speaker]
dim = 16
heads = 2
layers = 1
ff_inner = 16
prompt_layers = 1

[train_interpreter]
steps = 3
batch_size = 2

[train_speaker]
steps = 3
batch_size = 2

[decode]
n_c = 4
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tokcascade"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_and_config_errors_have_distinct_codes() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nunknown_key = 3\n").unwrap();
    let out = run(&["corpus-gen", "--config", s(&bad), "--out", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    std::fs::write(&bad, "[corpus]\nn_train = 3\n").unwrap();
    assert_eq!(
        run(&["corpus-gen", "--config", s(&bad), "--out", s(&dir.path().join("c"))])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let corpus = d.join("corpus");
    let interp = d.join("interp.tkc");
    let base = d.join("base.tkc");
    let spk = d.join("spk.tkc");

    assert!(run(&["corpus-gen", "--config", s(&cfg), "--out", s(&corpus)])
        .status
        .success());
    let c = tokcascade::toyworld::Corpus::read(&corpus).unwrap();
    assert_eq!((c.train.len(), c.eval.len()), (40, 6));

    for (out, variant) in [(&interp, "plusplus"), (&base, "baseline")] {
        let o = run(&[
            "train-interpreter",
            "--config",
            s(&cfg),
            "--corpus",
            s(&corpus),
            "--out",
            s(out),
            "--variant",
            variant,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&[
        "train-speaker",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--out",
        s(&spk),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let synth = d.join("synth");
    let o = run(&[
        "synthesize",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--interpreter",
        s(&interp),
        "--speaker",
        s(&spk),
        "--text",
        "abcd",
        "--semantic-prompt",
        &c.eval[0].id,
        "--acoustic-prompt",
        &c.train[1].id,
        "--out",
        s(&synth),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tokens: serde_json::Value = serde_json::from_slice(&std::fs::read(synth.join("tokens.json")).unwrap()).unwrap();
    let frames = tokens["semantic"].as_array().unwrap().len();
    assert_eq!(tokens["acoustic"][1][0].as_array().unwrap().len(), frames);
    let wav = parse_wav(&std::fs::read(synth.join("synth.wav")).unwrap()).unwrap();
    assert_eq!(
        (wav.channels, wav.sample_rate, wav.bits, wav.samples),
        (1, 16_000, 16, 320 * frames)
    );

    let o = run(&[
        "eval",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--interpreter",
        s(&interp),
        "--speaker",
        s(&spk),
        "--limit",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(line["utterances"], 3);
    assert!(line["ter"].as_f64().unwrap() >= 0.0);

    let o = run(&[
        "bench",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--interpreter",
        s(&interp),
        "--interpreter",
        s(&base),
        "--speaker",
        s(&spk),
        "--limit",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let reports: Vec<tokcascade::evalbench::BenchReport> = stdout
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(
        reports.iter().map(|r| r.variant.as_str()).collect::<Vec<_>>(),
        ["plusplus", "baseline", "speaker"]
    );
    assert_eq!(reports[2].forward_passes, Some(5));

    // a damaged checkpoint is reported, not loaded
    let mut bytes = std::fs::read(&interp).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&interp, bytes).unwrap();
    let o = run(&[
        "eval",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--interpreter",
        s(&interp),
        "--speaker",
        s(&spk),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("CRC"));
}
