use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn hamnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &str = "\
d = 8
heads = 2
vit_layers = 1
rgcn_layers = 1
interaction_rounds = 1
ffn_mult = 2
dropout = 0
learning_rate = 0.003
batch_train = 4
epochs = 50
seed = 3
train_path = fx/train.jsonl
val_path = fx/val.jsonl
test_path = fx/test.jsonl
checkpoint_dir = ckpt
";

fn fixtures(dir: &Path) {
    let out = hamnet(&[
        "gen-fixtures",
        "--seed",
        "7",
        "--out",
        dir.join("fx").to_str().unwrap(),
        "--train",
        "8",
        "--val",
        "4",
        "--test",
        "4",
        "--d",
        "8",
        "--d_v",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(dir.join("tiny.conf"), TINY).unwrap();
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&hamnet(&["--help"])), 0);
    assert_eq!(code(&hamnet(&["frobnicate"])), 1);
    assert_eq!(code(&hamnet(&["eval", "--ckpt", "x"])), 1);
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let conf = dir.path().join("tiny.conf");
    let out = hamnet(&["train", "--config", conf.to_str().unwrap(), "--heads", "3"]);
    assert_eq!(code(&out), 1);
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "d = eight\n").unwrap();
    assert_eq!(code(&hamnet(&["train", "--config", bad.to_str().unwrap()])), 1);
}

#[test]
fn flags_override_config_and_checkpoint_feeds_eval_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let conf = dir.path().join("tiny.conf");
    let out = hamnet(&[
        "train",
        "--config",
        conf.to_str().unwrap(),
        "--epochs",
        "2",
        "--seed",
        "11",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let ckpt = dir.path().join("ckpt");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(ckpt.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["epochs"], 2);
    assert_eq!(manifest["config"]["seed"], 11);
    assert_eq!(manifest["config"]["d"], 8);
    assert!(manifest["training"]["epoch"].as_u64().unwrap() <= 2);

    let test = dir.path().join("fx/test.jsonl");
    let out = hamnet(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["examples"], 4);
    let f1 = report["scores"]["overall"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    let preds = dir.path().join("preds.jsonl");
    let out = hamnet(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let lines: Vec<Value> = fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["index"], i);
        assert_eq!(
            l["labels"].as_array().unwrap().len(),
            l["tokens"].as_array().unwrap().len()
        );
        for s in l["spans"].as_array().unwrap() {
            assert!(["PER", "LOC", "ORG", "MISC"].contains(&s["type"].as_str().unwrap()));
            assert!(s["start"].as_u64().unwrap() < s["end"].as_u64().unwrap());
        }
    }
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let test = dir.path().join("fx/test.jsonl");
    let missing = dir.path().join("missing");
    let out = hamnet(&[
        "eval",
        "--ckpt",
        missing.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);

    let broken = dir.path().join("fx/broken.jsonl");
    fs::write(&broken, "{\"tokens\": [\"a\"]}\n").unwrap();
    let out = hamnet(&["graph", "--data", broken.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let out = hamnet(&["graph", "--data", test.to_str().unwrap(), "--index", "99"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn graph_dump_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let train = dir.path().join("fx/train.jsonl");
    for index in 0..8 {
        let idx = index.to_string();
        let out = hamnet(&["graph", "--data", train.to_str().unwrap(), "--index", &idx]);
        assert_eq!(code(&out), 0);
        let g: Value = serde_json::from_str(&stdout(&out)).unwrap();
        let nodes = g["nodes"].as_array().unwrap();
        assert_eq!(nodes[0]["kind"], "image");
        let from_root = g["edges"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|e| e[0] == 0 && e[2] == "inside")
            .count();
        assert_eq!(from_root, nodes.len() - 1);

        let out = hamnet(&[
            "graph",
            "--data",
            train.to_str().unwrap(),
            "--index",
            &idx,
            "--format",
            "dot",
        ]);
        assert_eq!(code(&out), 0);
        assert!(stdout(&out).starts_with("digraph"));
    }
}

#[test]
fn sweep_prints_one_row_per_depth() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let conf = dir.path().join("tiny.conf");
    let out = hamnet(&[
        "sweep-l",
        "--config",
        conf.to_str().unwrap(),
        "--l",
        "0,1,2",
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "L\tP\tR\tF1");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("0\t") && rows[3].starts_with("2\t"));
}

fn degenerate_line(tokens: &[&str], labels: &[&str], objects: Value) -> String {
    let m = tokens.len();
    json!({
        "tokens": tokens,
        "labels": labels,
        "cls_feat": vec![0.1; 8],
        "word_feats": (0..m).map(|i| vec![0.05 * i as f64; 8]).collect::<Vec<_>>(),
        "image_feat": vec![0.0; 4],
        "objects": objects,
    })
    .to_string()
}

#[test]
fn degenerate_inputs_run_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fx");
    fs::create_dir_all(&data).unwrap();
    let obj = json!([{"bbox": [0.5, 0.5, 0.4, 0.4], "feat": [0.1, 0.2, 0.3, 0.4], "concept_id": 1, "score": 0.8}]);
    let lines = [
        degenerate_line(&["solo"], &["B-PER"], json!([])),
        degenerate_line(&["a", "b", "c"], &["O", "O", "O"], json!([])),
        degenerate_line(&["x"], &["O"], obj),
    ];
    for split in ["train", "val", "test"] {
        fs::write(data.join(format!("{split}.jsonl")), lines.join("\n") + "\n").unwrap();
    }
    let meta = json!({"d": 8, "d_v": 4, "concept_vocab": 3, "label_set": ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC"]});
    fs::write(data.join("meta.json"), meta.to_string()).unwrap();
    let conf = dir.path().join("tiny.conf");
    fs::write(&conf, TINY).unwrap();

    let out = hamnet(&["train", "--config", conf.to_str().unwrap(), "--epochs", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("ckpt");
    let test = data.join("test.jsonl");
    let out = hamnet(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("(2 without objects)"));
    let preds = dir.path().join("p.jsonl");
    let out = hamnet(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        test.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(preds).unwrap().lines().count(), 3);
}
