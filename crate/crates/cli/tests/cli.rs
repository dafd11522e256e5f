use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_t2i-eval"));
    c.env_remove("T2I_EVAL_TOKEN").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn png(path: &Path, shade: u8) {
    image::RgbImage::from_fn(16, 16, |x, y| image::Rgb([shade, (x * 16) as u8, (y * 16) as u8]))
        .save(path)
        .unwrap();
}

fn dataset(dir: &Path) -> PathBuf {
    png(&dir.join("bird.png"), 10);
    png(&dir.join("car.png"), 200);
    let path = dir.join("d.jsonl");
    fs::write(
        &path,
        concat!(
            r#"{"image_id":"bird","image_path":"bird.png","caption":"a small bird with a red head","attributes":["small bird","red head"]}"#,
            "\n",
            r#"{"image_id":"car","image_path":"car.png","caption":"a blue car","attributes":["blue car"]}"#,
            "\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn help_lists_every_command() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    for cmd in ["eval", "degrade", "qgen", "compare"] {
        assert!(stdout(&o).contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["eval", "--no-such-flag"]);
    assert_eq!(code(&o), 64);
    assert!(run(&["frobnicate"]).status.code() == Some(64));
}

#[test]
fn offline_eval_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("out");
    let o = run(&[
        "eval", "--dataset", data.to_str().unwrap(), "--qgen", "rule", "--vqa", "mock:oracle",
        "--iqa", "mock:sidecar", "--w-tia", "0.5", "--w-iqa", "0.5", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 2);
    let log = fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.contains("w_tia = 0.5"));
    assert!(log.contains("backend vqa mock:oracle: backend_calls="));
}

#[test]
fn invalid_weights_are_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("out");
    let o = run(&[
        "eval", "--dataset", data.to_str().unwrap(), "--w-tia", "0.7", "--w-iqa", "0.7",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 64, "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn endpoint_weight_final_equals_tia_in_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("out");
    let o = run(&[
        "eval", "--dataset", data.to_str().unwrap(), "--w-tia", "1", "--w-iqa", "0",
        "--vqa", "mock:fixed=no", "--iqa", "mock:fixed=0.9", "--format", "csv", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name| header.iter().position(|h| *h == name).unwrap();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[col("final")], cells[col("tia")]);
        assert_eq!(cells[col("tia")], "0");
        assert_eq!(cells[col("iqa")], "0.9");
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.conf");
    fs::write(
        &cfg,
        format!("# offline\nw_tia = 0.2\nw_iqa = 0.8\nformat = markdown\nout = {}\n", out.display()),
    )
    .unwrap();
    let o = bin()
        .args(["--config", cfg.to_str().unwrap(), "eval", "--dataset", data.to_str().unwrap(), "--w-tia", "0.6", "--w-iqa", "0.4"])
        .env("T2I_EVAL_TOKEN", "hunter2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.contains("w_tia = 0.6") && log.contains("w_iqa = 0.4"));
    assert!(log.contains("token = <redacted>"));
    assert!(!log.contains("hunter2"));
    assert!(out.join("report.md").exists());

    fs::write(&cfg, "nonsense = 1\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "eval", "--dataset", data.to_str().unwrap()]);
    assert_eq!(code(&o), 64);
}

#[test]
fn partial_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    // An image with no attribute table makes the oracle fail for that record only.
    png(&dir.path().join("dog.png"), 90);
    let mut text = fs::read_to_string(&data).unwrap();
    text.push_str(r#"{"image_id":"dog","image_path":"dog.png","caption":"a dog"}"#);
    fs::write(&data, text).unwrap();
    let out = dir.path().join("out");
    let o = run(&["eval", "--dataset", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("1 of 3 records failed"));
    let report = fs::read_to_string(out.join("report.jsonl")).unwrap();
    assert_eq!(report.matches(r#""status":"ok""#).count(), 2);
    assert_eq!(report.matches(r#""status":"failed""#).count(), 1);
}

#[test]
fn unreachable_backend_fails_records_not_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let out = dir.path().join("out");
    let o = run(&["eval", "--dataset", data.to_str().unwrap(), "--vqa", &url, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("transport error"));
}

#[test]
fn qgen_prints_questions() {
    let o = run(&["qgen", "--caption", "a red bird", "--mode", "rule"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "Does the image show a red?\nDoes the image show bird?\n");
    let o = run(&["qgen", "--caption", "hi", "--mode", "rule"]);
    assert_eq!(stdout(&o).lines().count(), 1);
    assert_eq!(code(&run(&["qgen", "--mode", "rule"])), 64);
    assert_eq!(code(&run(&["qgen", "--caption", "a red bird", "--mode", "llm"])), 64);
}

#[test]
fn degrade_plans_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    fs::create_dir(&src).unwrap();
    let o = run(&["degrade", "--src", src.to_str().unwrap(), "--out", dir.path().join("c").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no images"));

    png(&src.join("a.png"), 50);
    let o = run(&["degrade", "--src", src.to_str().unwrap(), "--plan", "sepia"]);
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("default, blur, noise, jpeg"));

    let corpus = dir.path().join("c");
    let o = run(&["degrade", "--src", src.to_str().unwrap(), "--plan", "jpeg", "--out", corpus.to_str().unwrap(), "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim().len(), 64);
    assert!(corpus.join("manifest.json").exists());
    assert!(corpus.join("a__jpeg_3.json").exists());
}

#[test]
fn compare_table_and_invalid_case() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for (i, id) in ["a", "b", "c", "d"].iter().enumerate() {
        png(&dir.path().join(format!("{id}.png")), 60 * i as u8);
    }
    let rows = [
        ("a", "a red bird", "c1", 1), ("a", "a blue bird", "c1", 2),
        ("b", "a green car", "c2", 1), ("b", "a yellow car", "c2", 2),
        ("c", "a brown dog", "c3", 1), ("c", "a white dog", "c3", 2),
        ("d", "a black cat", "lonely", 1),
    ];
    for (id, caption, case, rank) in rows {
        let attrs = match id {
            "a" => r#"["red bird"]"#,
            "b" => r#"["green car"]"#,
            "c" => r#"["brown dog"]"#,
            _ => r#"["black cat"]"#,
        };
        text.push_str(&format!(
            r#"{{"image_id":"{id}","image_path":"{id}.png","caption":"{caption}","attributes":{attrs},"caption_id":"{id}{rank}","case_id":"{case}","gt_rank":{rank}}}"#
        ));
        text.push('\n');
    }
    let data = dir.path().join("cases.jsonl");
    fs::write(&data, text).unwrap();
    let args = |out: &Path| {
        run(&[
            "compare", "--dataset", data.to_str().unwrap(), "--baseline", "clip=mock:fixed=0.5",
            "--out", out.to_str().unwrap(),
        ])
    };
    let first = args(&dir.path().join("o1"));
    assert_eq!(code(&first), 2, "{}", stderr(&first));
    let table = stdout(&first);
    assert!(table.contains("| case | GT | n | ours | tia | iqa | baseline:clip | note |"), "{table}");
    let row = |case: &str| table.lines().find(|l| l.starts_with(&format!("| {case} "))).unwrap().to_string();
    assert!(row("c1").contains("| 1.0000* |"));
    assert!(row("lonely").contains("invalid: need at least 2"));
    assert!(stderr(&first).contains("case lonely is invalid"));
    let second = args(&dir.path().join("o2"));
    assert_eq!(stdout(&second), table);
}
