use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn nmst(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nmst"));
    c.args(args).env_remove("NMST_OUT_DIR");
    if let Some(p) = out_env {
        c.env("NMST_OUT_DIR", p);
    }
    c.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn corpus(dir: &Path) -> PathBuf {
    let p = dir.join("corpus.txt");
    std::fs::write(&p, nmst::corpus::synthetic_grammar_corpus(120, 3).join("\n")).unwrap();
    p
}

fn train_args<'a>(corpus: &'a str, out: &'a str, head: &'a str, eps: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--corpus", corpus, "--tokenizer", "word", "--head", head, "--eps", eps, "--cell", "rnn",
        "--hidden", "8", "--max-epochs", "2", "--context-length", "3", "--seed", "5", "--out", out,
    ]
}

fn trained(dir: &Path, eps: &str) -> PathBuf {
    let c = corpus(dir);
    let out = dir.join("run");
    let o = nmst(&train_args(c.to_str().unwrap(), out.to_str().unwrap(), "nmst", eps), None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), "1e-3");
    for f in ["model.nmst", "metrics.json", "run_config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let metrics: Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["epochs"].as_array().unwrap().len(), 2);
    assert!(metrics["best_valid_perplexity"].as_f64().unwrap().is_finite());

    let again = dir.path().join("again");
    let c = dir.path().join("corpus.txt");
    let o = nmst(&train_args(c.to_str().unwrap(), again.to_str().unwrap(), "nmst", "1e-3"), None);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(out.join("metrics.json")).unwrap(),
        std::fs::read(again.join("metrics.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(out.join("model.nmst")).unwrap(),
        std::fs::read(again.join("model.nmst")).unwrap()
    );
}

#[test]
fn epsilon_with_vanilla_head_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let out = dir.path().join("x");
    let o = nmst(&train_args(c.to_str().unwrap(), out.to_str().unwrap(), "va", "1e-4"), None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));
    let o = nmst(&["train", "--corpus", c.to_str().unwrap(), "--head", "nmst"], None);
    assert_eq!(code(&o), 2, "nmst without epsilon");
}

#[test]
fn generate_greedy_and_beam() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), "0.1");
    let ckpt = out.join("model.nmst");
    let ctx = dir.path().join("contexts.txt");
    std::fs::write(&ctx, "the cat sees\na dog\nshe sleeps\n").unwrap();
    let args = |dec: &'static str| {
        vec![
            "generate".to_string(),
            "--checkpoint".into(),
            ckpt.to_str().unwrap().into(),
            "--contexts".into(),
            ctx.to_str().unwrap().into(),
            "--decoder".into(),
            dec.into(),
            "--cap".into(),
            "200".into(),
        ]
    };
    let run = |dec: &'static str| {
        let a = args(dec);
        nmst(&a.iter().map(String::as_str).collect::<Vec<_>>(), None)
    };

    let o = run("greedy");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let recs: Vec<Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(recs.len(), 3);
    for r in &recs {
        // half-life of ε = 0.1 is 7 steps
        assert_eq!(r["terminated"], true);
        assert!(r["length"].as_u64().unwrap() <= 7);
        assert_eq!(r["eos_probs"].as_array().unwrap().len() as u64, r["length"].as_u64().unwrap());
    }

    let o = run("beam:4");
    assert_eq!(code(&o), 0);
    let first: Value = serde_json::from_str(String::from_utf8(o.stdout).unwrap().lines().next().unwrap()).unwrap();
    assert!(first["final_set_size"].as_u64().unwrap() >= 4);

    assert_eq!(code(&run("top-k:0")), 2);
}

#[test]
fn eval_reports_perplexity_and_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), "0.1");
    let c = dir.path().join("corpus.txt");
    let ev = dir.path().join("eval");
    let o = nmst(
        &[
            "eval", "--checkpoint", out.join("model.nmst").to_str().unwrap(), "--corpus", c.to_str().unwrap(),
            "--decoders", "greedy,top-k:2,beam:2", "--thresholds", "10", "--cap", "100", "--max-contexts", "20",
            "--out", ev.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_slice(&std::fs::read(ev.join("metrics.json")).unwrap()).unwrap();
    assert!(m["perplexity"].as_f64().unwrap().is_finite());
    let decs = m["decoders"].as_array().unwrap();
    assert_eq!(decs.len(), 3);
    for d in decs {
        assert_eq!(d["r_nt"]["10"], 0.0, "{d}");
    }
    assert!(ev.join("generations_top-k_2.jsonl").exists());
    let csv = std::fs::read_to_string(ev.join("r_nt.csv")).unwrap();
    assert!(csv.starts_with("decoder,threshold,r_nt\n"));

    let o = nmst(
        &[
            "eval", "--checkpoint", out.join("model.nmst").to_str().unwrap(), "--corpus", c.to_str().unwrap(),
            "--thresholds", "1000", "--cap", "100",
        ],
        Some(dir.path()),
    );
    assert_eq!(code(&o), 2, "threshold above cap");
}

#[test]
fn witness_checkpoint_never_terminates() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("witness.nmst");
    assert_eq!(code(&nmst(&["witness", "--out", w.to_str().unwrap()], None)), 0);
    let c = dir.path().join("w.txt");
    std::fs::write(&c, "t1 t2\nt2\nt1 t1 t1\n").unwrap();
    let o = nmst(
        &[
            "eval", "--checkpoint", w.to_str().unwrap(), "--corpus", c.to_str().unwrap(), "--cap", "1000",
        ],
        Some(dir.path()),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // written to NMST_OUT_DIR since --out was not given
    let m: Value = serde_json::from_slice(&std::fs::read(dir.path().join("metrics.json")).unwrap()).unwrap();
    for l in ["10", "100", "1000"] {
        assert_eq!(m["decoders"][0]["r_nt"][l], 1.0);
    }
}

#[test]
fn verify_suites_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = nmst(&["verify", "--suite", "decoders", "--trials", "300"], Some(dir.path()));
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["suite"], "decoders");
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    assert!(dir.path().join("verify_decoders.json").exists());

    assert_eq!(code(&nmst(&["verify", "--suite", "nonsense"], Some(dir.path()))), 2);

    let o = nmst(&["verify", "--suite", "remark21"], Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let traces: Value = serde_json::from_slice(&std::fs::read(dir.path().join("alpha_traces.json")).unwrap()).unwrap();
    assert_eq!(traces["nmst"].as_array().unwrap().len(), 7);
}
