use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tissue_core::model::{class_palette, load_labeled_image, load_manifest, load_mask, load_rgb, ManifestEntry};
use tissue_core::svm::Standardizer;
use tissue_core::synthetic::{synthetic_dataset, write_dataset};
use tissue_core::{Descriptor, EvalReport, FeatureTable, ModelBundle, SvmModel, NUM_CLASSES};

fn tissue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tissue")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = tissue(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn shipped_fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/synthetic/manifest.csv")
}

fn small_dataset(dir: &Path, n: usize) -> PathBuf {
    let images: Vec<_> = synthetic_dataset(1, 5).into_iter().take(n).collect();
    write_dataset(dir, &images).unwrap();
    dir.join("manifest.csv")
}

/// Majority label of every full patch, straight from the mask pixels.
fn recount(entry: &ManifestEntry, side: u32) -> [u32; NUM_CLASSES] {
    let mask = load_mask(&entry.mask_path).unwrap();
    let mut counts = [0u32; NUM_CLASSES];
    for gy in 0..mask.height() / side {
        for gx in 0..mask.width() / side {
            let mut votes = [0u32; 8];
            for y in 0..side {
                for x in 0..side {
                    votes[usize::from(mask.get_pixel(gx * side + x, gy * side + y)[0])] += 1;
                }
            }
            let best = (1..=7).max_by_key(|&c| (votes[c], std::cmp::Reverse(c))).unwrap();
            if votes[best] > 0 {
                counts[best - 1] += 1;
            }
        }
    }
    counts
}

#[test]
fn patchify_writes_one_row_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 2);
    let out = dir.path().join("counts.csv");
    ok(&["patchify", "--manifest", s(&manifest), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image_id,c1,c2,c3,c4,c5,c6,c7");
    assert_eq!(lines.len(), 3);
    let m = load_manifest(&manifest).unwrap();
    for (line, entry) in lines[1..].iter().zip(&m.entries) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], entry.image_id);
        let counts: Vec<u32> = fields[1..].iter().map(|f| f.parse().unwrap()).collect();
        assert_eq!(counts, recount(entry, 20));
    }
}

#[test]
fn unreadable_mask_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 2);
    let m = load_manifest(&manifest).unwrap();
    fs::write(&m.entries[1].mask_path, b"not a png").unwrap();
    let out = tissue(&["patchify", "--manifest", s(&manifest), "--out", s(&dir.path().join("c.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let name = m.entries[1].mask_path.file_name().unwrap().to_str().unwrap();
    assert!(stderr.contains(name), "{stderr}");
}

#[test]
fn network_descriptor_without_models_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 1);
    let out = tissue(&["extract", "--manifest", s(&manifest), "-d", "fc6", "--out", s(&dir.path().join("x.wfc"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alexnet_fc6.onnx"));
}

#[test]
fn stub8_cache_has_dim_1000() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 3);
    let cache = dir.path().join("stub8.wfc");
    ok(&["extract", "--manifest", s(&manifest), "-d", "stub8", "--out", s(&cache)]);
    let table = FeatureTable::load(&cache).unwrap();
    assert_eq!(table.dim, 1000);
    assert_eq!(table.image_ids.len(), 3);
    assert!(!table.rows.is_empty());
    let bytes = fs::read(&cache).unwrap();
    assert_eq!(table.to_bytes().unwrap(), bytes);
}

#[test]
fn identical_images_balance_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.csv");
    fs::write(&counts, "image_id,c1,c2,c3,c4,c5,c6,c7\na,4,0,2,0,0,0,1\nb,4,0,2,0,0,0,1\nc,4,0,2,0,0,0,1\n").unwrap();
    let out = dir.path().join("folds.csv");
    ok(&["folds", "--counts", s(&counts), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("# total,0\n"), "{text}");
    let folds: Vec<usize> = text
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let mut sorted = folds.clone();
    sorted.sort();
    assert_eq!(sorted, [0, 1, 2]);
}

#[test]
fn folds_summary_matches_its_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = shipped_fixture();
    let counts = dir.path().join("counts.csv");
    ok(&["patchify", "--manifest", s(&manifest), "--out", s(&counts)]);
    let out = dir.path().join("folds.csv");
    ok(&["--k", "4", "folds", "--counts", s(&counts), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();

    let ids: Vec<&str> = text.lines().skip(1).take_while(|l| !l.starts_with('#')).map(|l| l.split(',').next().unwrap()).collect();
    let expected: Vec<String> = load_manifest(&manifest).unwrap().entries.into_iter().map(|e| e.image_id).collect();
    assert_eq!(ids, expected);

    let ledger: Vec<Vec<f64>> = text
        .lines()
        .skip_while(|l| !l.starts_with("# fold,"))
        .skip(1)
        .map(|l| l[2..].split(',').skip(2).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(ledger.len(), 4);
    let sigma: f64 = (0..NUM_CLASSES)
        .map(|c| {
            let mean = ledger.iter().map(|r| r[c]).sum::<f64>() / 4.0;
            (ledger.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / 4.0).sqrt()
        })
        .sum();
    let total: f64 = text.lines().find_map(|l| l.strip_prefix("# total,")).unwrap().parse().unwrap();
    assert!((total - sigma).abs() < 1e-9, "{total} vs {sigma}");
}

#[test]
fn staged_commands_match_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = shipped_fixture();
    let p = |name: &str| dir.path().join(name);
    ok(&["patchify", "--manifest", s(&manifest), "--out", s(&p("counts.csv"))]);
    ok(&["folds", "--counts", s(&p("counts.csv")), "--out", s(&p("folds.csv"))]);
    for d in ["hsv", "stub7"] {
        let cache = p(&format!("{d}.wfc"));
        ok(&["extract", "--manifest", s(&manifest), "-d", d, "--out", s(&cache)]);
        let staged = p(&format!("{d}-staged.json"));
        ok(&["--seed", "3", "eval", "--cache", s(&cache), "--folds", s(&p("folds.csv")), "--out", s(&staged)]);
        let direct = p(&format!("{d}-run.json"));
        ok(&["--seed", "3", "run", "--manifest", s(&manifest), "-d", d, "--out", s(&direct)]);
        assert_eq!(fs::read(&staged).unwrap(), fs::read(&direct).unwrap(), "{d}");
    }
}

#[test]
fn hsv_report_on_fixture_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = shipped_fixture();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let json = dir.path().join(format!("r{i}.json"));
        let text = dir.path().join(format!("r{i}.txt"));
        let out = ok(&["--k", "3", "run", "--manifest", s(&manifest), "-d", "hsv", "--out", s(&json), "--text", s(&text)]);
        assert_eq!(String::from_utf8(out.stdout).unwrap(), fs::read_to_string(&text).unwrap());
        outputs.push((fs::read(&json).unwrap(), fs::read(&text).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let report = EvalReport::from_json(std::str::from_utf8(&outputs[0].0).unwrap()).unwrap();
    assert!(report.per_class_accuracy.iter().all(Option::is_some));
    assert!(report.overall.unwrap() > 100.0 / 7.0);
    assert_eq!(report.run_config.k, 3);
}

#[test]
fn always_sloughy_model_paints_yellow() {
    let dir = tempfile::tempdir().unwrap();
    let d = Descriptor::Rgb.tag().dim();
    let mut biases = [-1.0; NUM_CLASSES];
    biases[1] = 1.0;
    let bundle = ModelBundle {
        descriptor: Descriptor::Rgb,
        patch_side: 20,
        pca: None,
        svm: SvmModel::from_parts(vec![0.0; NUM_CLASSES * d], biases, Standardizer::identity(d)).unwrap(),
    };
    let bundle_dir = dir.path().join("bundle");
    bundle.save(&bundle_dir).unwrap();

    let m = load_manifest(&shipped_fixture()).unwrap();
    let entry = &m.entries[4];
    let overlay = dir.path().join("overlay.png");
    let label_map = dir.path().join("labels.png");
    ok(&[
        "predict",
        "--image",
        s(&entry.image_path),
        "--bundle",
        s(&bundle_dir),
        "--out",
        s(&overlay),
        "--label-map",
        s(&label_map),
    ]);
    let src = load_rgb(&entry.image_path).unwrap();
    let labels = load_rgb(&label_map).unwrap();
    assert_eq!(labels.dimensions(), (src.width() / 20 * 20, src.height() / 20 * 20));
    assert!(labels.pixels().all(|p| p.0 == [255, 255, 0]));
    let overlay = load_rgb(&overlay).unwrap();
    assert_eq!(overlay.dimensions(), src.dimensions());
    for (x, y, px) in overlay.enumerate_pixels() {
        let inside = x < labels.width() && y < labels.height();
        let pal = class_palette(if inside { 2 } else { 0 }).unwrap();
        let s = src.get_pixel(x, y).0;
        let want: [u8; 3] = std::array::from_fn(|i| (0.5 * f64::from(s[i]) + 0.5 * f64::from(pal[i])).round() as u8);
        assert_eq!(px.0, want, "({x}, {y})");
    }
}

#[test]
fn train_then_mean_images() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = shipped_fixture();
    let cache = dir.path().join("hsvlbp.wfc");
    ok(&["extract", "--manifest", s(&manifest), "-d", "hsv+lbp", "--out", s(&cache)]);
    let bundle = dir.path().join("bundle");
    ok(&["train", "--cache", s(&cache), "-d", "hsv+lbp", "--pca", "--out", s(&bundle)]);
    let loaded = ModelBundle::load(&bundle).unwrap();
    assert_eq!(loaded.pca.as_ref().unwrap().n_components(), 18);

    let out = dir.path().join("means");
    ok(&[
        "mean-images", "--manifest", s(&manifest), "-d", "hsv+lbp", "--bundle", s(&bundle), "--top-dims", "4", "--out",
        s(&out),
    ]);
    let index = fs::read_to_string(out.join("features.csv")).unwrap();
    assert_eq!(index.lines().count(), 5);
    let pngs = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
    assert_eq!(pngs, 8);

    let img = &load_manifest(&manifest).unwrap().entries[0];
    let labeled = load_labeled_image(img).unwrap();
    let overlay = dir.path().join("o.png");
    ok(&["predict", "--image", s(&img.image_path), "--bundle", s(&bundle), "--out", s(&overlay)]);
    assert_eq!(load_rgb(&overlay).unwrap().dimensions(), labeled.pixels().dimensions());
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["--seed", "2", "synth", "--per-class", "1", "--out", s(dir.path())]);
    assert_eq!(load_manifest(&dir.path().join("manifest.csv")).unwrap().entries.len(), 7);
}
