use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use mirrorscan::controller::{parse_at, ControllerClient, PROTOCOL_BANNER};
use mirrorscan::cube::linspace_wavelengths;
use mirrorscan::cube_io::{read_cube, write_cube, DataType};
use mirrorscan::planner::ScanPlan;
use mirrorscan::synth::quadrant_texture;
use mirrorscan::SpectralCube;

const H: &str = "7.4e-6";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mirrorscan"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(
        &p,
        format!("seed = 3\nk = 8\nk_list = [2, 8]\n{extra}\n[scene.synthetic]\nsize = 128\nbands = 4\nregions = 10\n[camera]\nsensor_extent_m = {H}\n"),
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

fn plan_at(p: &Path) -> ScanPlan {
    ScanPlan::from_text(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn default_plan_respects_memory_and_patch_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&["plan", "--sensor-extent", H, "-o", out.to_str().unwrap()]);
    let low = plan_at(&out.join("lowres.plan"));
    let patches = plan_at(&out.join("patches.plan"));
    assert_eq!(patches.y_res(), 100 * 32);
    for p in [&low, &patches] {
        assert!(p.chunks.iter().all(|c| c.len() <= 1500));
    }
    assert_eq!(patches.sweep_count(), 100);
    assert!(out.join("manifest-plan.json").exists());
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&["capture", "--scene", "/no/such/scene.hdr", "--sensor-extent", H, "-o", d]), 2);
    assert_eq!(code(&["plan", "-o", d]), 2, "missing sensor extent");
    assert_eq!(code(&["capture", "--patch-size", "33", "--mode", "desk", "-o", d]), 2);
    assert_eq!(code(&["bogus-command"]), 2);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "k = \"many\"\n").unwrap();
    assert_eq!(code(&["plan", "-c", bad.to_str().unwrap()]), 2);

    // nothing captured yet
    assert_eq!(code(&["evaluate", "-o", d]), 3);
    // truncated payload
    let c = SpectralCube::filled(8, 8, vec![500.0], 1.0).unwrap();
    let hdr = write_cube(&c, dir.path().join("short"), DataType::F32).unwrap();
    fs::write(dir.path().join("short.raw"), [0u8; 10]).unwrap();
    assert_eq!(code(&["capture", "--mode", "desk", "--scene", hdr.to_str().unwrap(), "-o", d]), 3);
}

#[test]
fn uniform_scene_gives_uniform_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let c = SpectralCube::filled(128, 128, linspace_wavelengths(3, 400.0, 900.0), 0.25).unwrap();
    let hdr = write_cube(&c, dir.path().join("flat"), DataType::F32).unwrap();
    for mode in ["desk", "simulate"] {
        let out = dir.path().join(mode);
        ok(&["capture", "--mode", mode, "--scene", hdr.to_str().unwrap(), "-k", "3", "--sensor-extent", H, "-o", out.to_str().unwrap()]);
        let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("patches.json")).unwrap()).unwrap();
        let first = &index["patches"][0];
        assert_eq!((first["x"].as_u64(), first["y"].as_u64()), (Some(0), Some(0)), "tie-break picks row-major first");
        assert_eq!(index["patches"][1]["x"].as_u64(), Some(32));
        let low = read_cube(out.join("lowres.hdr")).unwrap();
        assert!(low.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-6), "{mode}");
        for i in 0..3 {
            let p = read_cube(out.join(format!("patches/patch_{i:03}.hdr"))).unwrap();
            assert!(p.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-6), "{mode}");
        }
    }
}

#[test]
fn textured_quadrant_attracts_all_patches() {
    let dir = tempfile::tempdir().unwrap();
    let hdr = write_cube(&quadrant_texture(256, 4, 2, 9).unwrap(), dir.path().join("q"), DataType::F32).unwrap();
    let out = dir.path().join("run");
    ok(&["capture", "--scene", hdr.to_str().unwrap(), "-k", "6", "--sensor-extent", H, "-o", out.to_str().unwrap()]);
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("patches.json")).unwrap()).unwrap();
    let patches = index["patches"].as_array().unwrap();
    assert_eq!(patches.len(), 6);
    for p in patches {
        let (x, y) = (p["x"].as_u64().unwrap(), p["y"].as_u64().unwrap());
        assert!(x + 32 <= 128 && y >= 128, "({x},{y}) outside the bottom-left quadrant");
    }
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.file_name().unwrap().to_string_lossy().starts_with("manifest") {
                out.push((p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn capture_and_evaluate_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "noise_sigma = 0.01");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["capture", "-c", &cfg, "-o", out.to_str().unwrap()]);
        ok(&["evaluate", "-c", &cfg, "-o", out.to_str().unwrap()]);
    }
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.iter().any(|(n, _)| n == "patchset.jsonl"));
    assert_eq!(fa, fb);
}

#[test]
fn evaluate_rows_follow_patch_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "mode = \"desk\"");
    let out = dir.path().join("run");
    ok(&["capture", "-c", &cfg, "-o", out.to_str().unwrap()]);
    let csv = ok(&["evaluate", "-c", &cfg, "-o", out.to_str().unwrap()]);
    assert_eq!(csv, fs::read_to_string(out.join("metrics.csv")).unwrap());
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(csv.lines().next().unwrap(), "run_id,k,total_patches,captured_fraction,miou,pa");
    assert_eq!(rows.len(), 4);
    // 128² scene, factor 2 → 64² low-res → 4 base patches of 32
    assert_eq!(&rows[0][..4], ["baseline-low", "0", "4", "0.250000"]);
    assert_eq!(&rows[1][..4], ["baseline-high", "0", "16", "1.000000"]);
    for r in &rows[2..] {
        let k: usize = r[1].parse().unwrap();
        assert_eq!(r[2].parse::<usize>().unwrap(), 4 + k);
        let miou: f64 = r[4].parse().unwrap();
        assert!((0.0..=100.0).contains(&miou));
    }
    for f in ["pred/ground_truth.pgm", "pred/adaptive_k8.pgm", "manifest-evaluate.json", "manifest-capture.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    // too many patches requested
    assert_eq!(code(&["evaluate", "-c", &cfg, "-o", out.to_str().unwrap(), "-k", "8", "--k-list", "9"]), 2);
}

#[test]
fn external_attention_map_drives_selection() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("att.pgm");
    // 64×64 low-res map with a single hot pixel at (50, 10)
    let mut data = vec![0u16; 64 * 64];
    data[10 * 64 + 50] = 255;
    mirrorscan::pnm::write_pgm(&map, &mirrorscan::pnm::GrayImage::new(64, 64, 255, data).unwrap()).unwrap();
    let cfg = small_config(dir.path(), "mode = \"desk\"");
    let out = dir.path().join("run");
    ok(&["capture", "-c", &cfg, "-k", "1", "--attention", map.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("patches.json")).unwrap()).unwrap();
    assert_eq!((index["patches"][0]["x"].as_u64(), index["patches"][0]["y"].as_u64()), (Some(96), Some(0)));
}

#[test]
fn geom_prints_csv() {
    let csv = ok(&["geom", "1,0,0", "1,0.1,-0.05"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "ox,oy,oz,x,y,u,v");
    let row: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let row: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[5] - 0.1).abs() < 1e-12 && (row[6] - 0.05).abs() < 1e-12);
    // round trip through --xy
    let back = ok(&["geom", "--xy", &format!("{},{}", row[3], row[4])]);
    let b: Vec<f64> = back.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((b[5] - 0.1).abs() < 1e-9 && (b[6] - 0.05).abs() < 1e-9);
    assert_eq!(code(&["geom", "0,0,-1"]), 2);
}

#[test]
fn synth_writes_scene_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    ok(&["synth", "--size", "64", "--bands", "3", "--regions", "6", "-o", out.to_str().unwrap()]);
    let c = read_cube(out.join("scene.hdr")).unwrap();
    assert_eq!((c.width(), c.height(), c.bands()), (64, 64, 3));
    assert!(out.join("labels.pgm").exists() && out.join("manifest-synth.json").exists());
    // the written scene feeds straight into capture + evaluate
    let run = dir.path().join("run");
    let scene = out.join("scene.hdr");
    let labels = out.join("labels.pgm");
    let common = ["--scene", scene.to_str().unwrap(), "--labels", labels.to_str().unwrap(), "--mode", "desk", "-k", "2", "-o", run.to_str().unwrap()];
    ok(&[&["capture"], &common[..]].concat());
    let csv = ok(&[&["evaluate"], &common[..]].concat());
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn controller_server_speaks_protocol() {
    let mut child = bin()
        .args(["serve-controller"])
        .env("MIRRORCTL_PORT", "0")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let result = std::panic::catch_unwind(|| {
        let mut c = ControllerClient::connect(&addr).unwrap();
        assert!(c.banner().starts_with(PROTOCOL_BANNER));
        assert_eq!(c.send_line("LOAD X 0.1,0.2").and_then(|_| c.read_line()).unwrap(), "OK");
        assert_eq!(c.send_line("LOAD Y 0,-0.5").and_then(|_| c.read_line()).unwrap(), "OK");
        assert_eq!(c.send_line("SPEED 0.5").and_then(|_| c.read_line()).unwrap(), "OK");
        let run = c.run().unwrap().unwrap();
        assert_eq!(run.len(), 2);
        assert_eq!(run[1].t_ms, 2.0);
        assert_eq!(run[1].xy.y(), -0.5);
        c.send_line("POS?").unwrap();
        assert_eq!(parse_at(&c.read_line().unwrap()).unwrap().xy.x(), 0.2);
    });
    child.kill().unwrap();
    child.wait().unwrap();
    result.unwrap();
}
