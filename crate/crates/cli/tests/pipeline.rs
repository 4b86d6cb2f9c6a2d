use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn reverblab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reverblab"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = reverblab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = "\
# tiny end-to-end run
corpus_dir = corpus
synthetic_utterances = 4
out_dir = out
t60_grid = 0.3, 0.7
snr = 20..30
utterances_per_condition = 4
test_fraction = 0.25
val_fraction = 0
epochs = 1
batch_size = 4
depth = 2
base_channels = 4
methods = reverberant, ls-unet
";

#[test]
fn full_pipeline_runs_from_the_command_line() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    fs::write(dir.join("run.cfg"), CONFIG).unwrap();
    let c = ["--config", "run.cfg", "--jobs", "1"];
    fn with<'a>(c: &[&'a str], rest: &[&'a str]) -> Vec<&'a str> {
        c.iter().chain(rest).copied().collect()
    }

    assert!(ok(dir, &with(&c, &["simulate"])).contains("wrote 8 rows"));
    let manifest = fs::read_to_string(dir.join("out/manifest.csv")).unwrap();
    assert!(manifest.starts_with("utterance_id,clean,reverb,rir,t60,snr_db,split"));

    assert!(ok(dir, &with(&c, &["features"])).contains("(8 computed)"));
    assert!(ok(dir, &with(&c, &["features"])).contains("(0 computed)"));

    let train = ok(dir, &with(&c, &["train", "--model", "ls-unet"]));
    assert!(train.contains("epoch   1"), "{train}");
    assert!(dir.join("out/train/ls-unet/best.lsun").exists());

    ok(dir, &with(&c, &["eval"]));
    let records = fs::read_to_string(dir.join("out/eval/records.csv")).unwrap();
    // One test source per T60, two methods.
    assert_eq!(records.lines().count(), 1 + 2 * 2);
    assert!(records.contains(",reverberant,") && records.contains(",ls-unet,"));

    let report = ok(dir, &with(&c, &["report"]));
    assert!(report.contains("PESQ omitted"));
    assert!(dir.join("out/eval/srmr_vs_t60_ls-unet.csv").exists());
    let first = fs::read(dir.join("out/eval/report.txt")).unwrap();
    ok(dir, &with(&c, &["report"]));
    assert_eq!(fs::read(dir.join("out/eval/report.txt")).unwrap(), first);

    let clean = fs::read_dir(dir.join("corpus")).unwrap().next().unwrap().unwrap().path();
    let clean = clean.to_str().unwrap();
    ok(dir, &with(&c, &["dereverb", "--method", "fd-ndlp", "-i", clean, "-o", "wpe.wav"]));
    ok(dir, &with(&c, &["dereverb", "--method", "ls-unet", "-i", clean, "-o", "ls.wav"]));
    assert!(dir.join("wpe.wav").exists() && dir.join("ls.wav").exists());
}

#[test]
fn gen_rir_writes_wav_and_sidecar() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["gen-rir", "--t60", "0.5", "-o", "h.wav"]);
    assert!(out.contains("measured T60"), "{out}");
    assert!(d.path().join("h.wav").exists());
    assert!(fs::read_to_string(d.path().join("h.txt")).unwrap().contains("t60 = 0.5"));
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let d = tempfile::tempdir().unwrap();
    let bad_key = reverblab(d.path(), &["--set", "bogus=1", "simulate"]);
    assert!(!bad_key.status.success());
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("unknown key"));

    let no_ckpt = reverblab(d.path(), &["dereverb", "--method", "unet", "-i", "x.wav", "-o", "y.wav"]);
    assert!(!no_ckpt.status.success());
    assert!(String::from_utf8_lossy(&no_ckpt.stderr).contains("checkpoint"));

    let no_records = reverblab(d.path(), &["report"]);
    assert!(!no_records.status.success());
}
