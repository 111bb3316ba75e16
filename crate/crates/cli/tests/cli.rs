use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use postsample::{write_pnm, DenoiserSpec, Param, RandomStream, Shape, Signal};
use serde_json::Value;
use tempfile::TempDir;

const CSV_HEADER: &str = "schema,row,seed,max_abs_rho,rho_dy,rho_dx,normality_p,empirical_std,sigma0,white,gaussian,energy_ok,passed,psnr_db";

fn postsample(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_postsample"))
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

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_json(dir: &Path, name: &str, spec: &DenoiserSpec) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string(spec).unwrap()).unwrap();
    path
}

fn write_image(dir: &Path, name: &str, sig: &Signal, maxval: u32) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, write_pnm(sig, true, maxval).unwrap()).unwrap();
    path
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn gaussian_prior(dir: &Path) -> PathBuf {
    write_json(
        dir,
        "prior.json",
        &DenoiserSpec::gaussian(0.5, 0.04).unwrap(),
    )
}

fn clean_image(dir: &Path) -> PathBuf {
    let mut s = RandomStream::new(3);
    let values = (0..256).map(|_| 0.3 + 0.4 * s.next_uniform()).collect();
    write_image(
        dir,
        "clean.pgm",
        &Signal::new(values, Shape::new(16, 16, 1)).unwrap(),
        255,
    )
}

fn denoise_args<'a>(input: &'a str, prior: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "denoise",
        "--input",
        input,
        "--add-noise",
        "--sigma0",
        "0.406",
        "--chains",
        "4",
        "--seed",
        "7",
        "--denoiser",
        prior,
        "--out-dir",
        out,
    ]
}

#[test]
fn denoise_writes_chains_csv_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let (input, prior, out) = (
        clean_image(tmp.path()),
        gaussian_prior(tmp.path()),
        tmp.path().join("run"),
    );
    let result = postsample(&denoise_args(p(&input), p(&prior), p(&out)));
    assert_eq!(
        code(&result),
        0,
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );

    let images: Vec<Vec<u8>> = (0..4)
        .map(|c| fs::read(out.join(format!("chain_{c:03}.pgm"))).unwrap())
        .collect();
    let distinct: BTreeSet<&Vec<u8>> = images.iter().collect();
    assert_eq!(distinct.len(), 4);
    assert!(out.join("noisy.pgm").exists());
    assert!(!out.join("INCOMPLETE").exists());

    let csv = fs::read_to_string(out.join("residuals.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].starts_with("1,truth,,"));
    let chain_rows: Vec<&str> = lines
        .iter()
        .copied()
        .filter(|l| l.contains(",chain_"))
        .collect();
    assert_eq!(chain_rows.len(), 4);
    for (c, row) in chain_rows.iter().enumerate() {
        assert!(row.starts_with(&format!("1,chain_{c},{},", 7 + c)), "{row}");
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
    }

    let m = manifest(&out);
    assert_eq!(m["format"], "postsample-manifest/1");
    assert_eq!(m["schedule"]["levels_below"], 204);
    assert_eq!(m["schedule"]["levels_above"], 0);
    assert_eq!(m["config"]["schedule"]["steps_per_level"], 5);
    assert_eq!(m["config"]["schedule"]["epsilon"], 3.3e-6);
    let seeds: Vec<u64> = m["chains"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, vec![7, 8, 9, 10]);
    assert_eq!(m["config"]["denoiser"]["kind"], "gaussian_prior");
}

#[test]
fn same_invocation_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (input, prior) = (clean_image(tmp.path()), gaussian_prior(tmp.path()));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(
        code(&postsample(&denoise_args(p(&input), p(&prior), p(&a)))),
        0
    );
    assert_eq!(
        code(&postsample(&denoise_args(p(&input), p(&prior), p(&b)))),
        0
    );
    let names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(names.len() >= 7);
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn replay_reproduces_artifacts() {
    let tmp = TempDir::new().unwrap();
    let prior = gaussian_prior(tmp.path());
    let (first, again) = (tmp.path().join("first"), tmp.path().join("again"));
    let args = [
        "denoise",
        "--input",
        "synthetic:8x8x3",
        "--add-noise",
        "--sigma0",
        "0.2",
        "--chains",
        "2",
        "--seed",
        "3",
        "--trace-stride",
        "50",
        "--denoiser",
        p(&prior),
        "--out-dir",
        p(&first),
    ];
    assert_eq!(code(&postsample(&args)), 0);
    assert!(first.join("clean.ppm").exists());
    assert!(first.join("trace_001.json").exists());
    let replay = postsample(&[
        "replay",
        "--manifest",
        p(&first.join("manifest.json")),
        "--out-dir",
        p(&again),
        "--check",
    ]);
    assert_eq!(
        code(&replay),
        0,
        "{}",
        String::from_utf8_lossy(&replay.stderr)
    );
    assert!(stdout(&replay).contains("replay identical"));

    // tampering with an artifact is detected
    fs::write(first.join("chain_000.ppm"), b"P6\n1 1\n255\n\0\0\0").unwrap();
    let third = tmp.path().join("third");
    let replay = postsample(&[
        "replay",
        "--manifest",
        p(&first.join("manifest.json")),
        "--out-dir",
        p(&third),
        "--check",
    ]);
    assert_eq!(code(&replay), 1);
}

#[test]
fn zero_sigma_is_rejected_before_compute() {
    let tmp = TempDir::new().unwrap();
    let (input, prior, out) = (
        clean_image(tmp.path()),
        gaussian_prior(tmp.path()),
        tmp.path().join("run"),
    );
    let mut args = denoise_args(p(&input), p(&prior), p(&out));
    args[5] = "0";
    let result = postsample(&args);
    assert_eq!(code(&result), 2);
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&postsample(&["denoise"])), 2);
    assert_eq!(code(&postsample(&["no-such-command"])), 2);
    let tmp = TempDir::new().unwrap();
    let prior = gaussian_prior(tmp.path());
    let out = tmp.path().join("x");
    let missing = postsample(&[
        "denoise",
        "--input",
        "/nonexistent.pgm",
        "--sigma0",
        "0.1",
        "--denoiser",
        p(&prior),
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(code(&missing), 2);
    let bad_spec = tmp.path().join("bad.json");
    fs::write(
        &bad_spec,
        r#"{"kind":"gmm_prior","weights":[0.5,0.6],"means":[0,1],"variances":[0.1,0.1]}"#,
    )
    .unwrap();
    let bad = postsample(&[
        "denoise",
        "--input",
        "synthetic:2x2x1",
        "--sigma0",
        "0.1",
        "--denoiser",
        p(&bad_spec),
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn divergence_exits_3_and_leaves_marker() {
    let tmp = TempDir::new().unwrap();
    let prior = gaussian_prior(tmp.path());
    let out = tmp.path().join("run");
    let result = postsample(&[
        "denoise",
        "--input",
        "synthetic:4x4x1",
        "--add-noise",
        "--sigma0",
        "0.3",
        "--epsilon",
        "100",
        "--denoiser",
        p(&prior),
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(
        code(&result),
        3,
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let marker = fs::read_to_string(out.join("INCOMPLETE")).unwrap();
    assert!(marker.contains("diverged"), "{marker}");
    assert!(!out.join("chain_000.pgm").exists());
    assert!(!out.join("manifest.json").exists());
}

fn filled_mask(dir: &Path, name: &str, shape: Shape, value: f64) -> PathBuf {
    let sig = Signal::new(
        vec![value; shape.height * shape.width],
        Shape::new(shape.height, shape.width, 1),
    )
    .unwrap();
    write_image(dir, name, &sig, 255)
}

fn object_keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn inpaint_reduction_masks() {
    let tmp = TempDir::new().unwrap();
    let prior = gaussian_prior(tmp.path());
    let shape = Shape::new(8, 8, 1);
    let full = filled_mask(tmp.path(), "full.pgm", shape, 1.0);
    let empty = filled_mask(tmp.path(), "empty.pgm", shape, 0.0);
    let run = |mask: &Path, out: &Path| {
        postsample(&[
            "inpaint",
            "--input",
            "synthetic:8x8x1",
            "--add-noise",
            "--sigma0",
            "0.2",
            "--sigma-minus-k",
            "1.0",
            "--mask",
            p(mask),
            "--chains",
            "2",
            "--seed",
            "5",
            "--denoiser",
            p(&prior),
            "--out-dir",
            p(out),
        ])
    };
    let (full_out, empty_out, plain_out) = (
        tmp.path().join("full"),
        tmp.path().join("empty"),
        tmp.path().join("plain"),
    );
    assert_eq!(code(&run(&full, &full_out)), 0);
    let empty_run = run(&empty, &empty_out);
    assert_eq!(code(&empty_run), 0);
    assert!(stdout(&empty_run).contains("no observed pixels"));
    let plain = postsample(&[
        "denoise",
        "--input",
        "synthetic:8x8x1",
        "--add-noise",
        "--sigma0",
        "0.2",
        "--chains",
        "2",
        "--seed",
        "5",
        "--denoiser",
        p(&prior),
        "--out-dir",
        p(&plain_out),
    ]);
    assert_eq!(code(&plain), 0);

    let (mf, me, md) = (
        manifest(&full_out),
        manifest(&empty_out),
        manifest(&plain_out),
    );
    assert_eq!(mf["mask_coverage"], "full");
    assert_eq!(mf["no_observations"], false);
    assert_eq!(me["mask_coverage"], "no_observations");
    assert_eq!(me["no_observations"], true);
    assert_eq!(md["no_observations"], false);
    // same manifest schema apart from the inpainting-only fields
    let mut plain_keys = object_keys(&md);
    plain_keys.insert("mask_coverage".into());
    assert_eq!(object_keys(&mf), plain_keys);
    assert!(mf["schedule"]["levels_above"].as_u64().unwrap() > 0);
    assert_eq!(mf["config"]["mask"].as_array().unwrap().len(), 64);
    assert_eq!(me["config"]["mask"].as_array().unwrap().len(), 0);
    assert!(me["chains"][0]["passed"].is_null());

    let csv = fs::read_to_string(empty_out.join("residuals.csv")).unwrap();
    let row = csv.lines().find(|l| l.contains(",chain_0,")).unwrap();
    // residual columns blank, PSNR against the known clean image present
    let (residual, psnr) = row.rsplit_once(',').unwrap();
    assert_eq!(residual, "1,chain_0,5,,,,,,,,,,");
    assert!(psnr.parse::<f64>().unwrap() > 0.0);
}

#[test]
fn mask_shape_mismatch_exits_2() {
    let tmp = TempDir::new().unwrap();
    let prior = gaussian_prior(tmp.path());
    let mask = filled_mask(tmp.path(), "m.pgm", Shape::new(4, 4, 1), 1.0);
    let result = postsample(&[
        "inpaint",
        "--input",
        "synthetic:8x8x1",
        "--sigma0",
        "0.2",
        "--sigma-minus-k",
        "1.0",
        "--mask",
        p(&mask),
        "--denoiser",
        p(&prior),
        "--out-dir",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&result), 2);
    assert!(String::from_utf8_lossy(&result.stderr).contains("does not match"));
}

/// 48×48×3 mixture of four textures with per-pixel variance 0.01.
fn texture_spec() -> DenoiserSpec {
    let shape = Shape::new(48, 48, 3);
    let template = |f: &dyn Fn(f64, f64, f64) -> f64| {
        let mut v = Vec::with_capacity(shape.len());
        for r in 0..shape.height {
            for c in 0..shape.width {
                for ch in 0..shape.channels {
                    v.push(f(r as f64, c as f64, ch as f64));
                }
            }
        }
        Param::Vector(v)
    };
    let means = vec![
        template(&|r, _, ch| {
            if ((r + 2.0 * ch) / 4.0).floor() % 2.0 == 0.0 {
                0.2
            } else {
                0.8
            }
        }),
        template(&|r, c, _| {
            if ((r / 4.0).floor() + (c / 4.0).floor()) % 2.0 == 0.0 {
                0.25
            } else {
                0.75
            }
        }),
        template(&|r, c, ch| 0.2 + 0.6 * ((r + c) / 94.0 * (1.0 - 0.2 * ch) + 0.1 * ch)),
        template(&|r, c, ch| {
            0.5 + 0.3 * (((r - 23.5).powi(2) + (c - 23.5).powi(2)).sqrt() / 3.0 + ch).cos()
        }),
    ];
    DenoiserSpec::gmm(vec![0.25; 4], means, vec![0.01; 4]).unwrap()
}

/// White background with two lines of black block "glyphs".
fn text_overlay_mask(dir: &Path) -> PathBuf {
    let (h, w) = (48, 48);
    let mut v = vec![1.0; h * w];
    for (top, count) in [(10, 7), (28, 5)] {
        for g in 0..count {
            let left = 4 + g * 6;
            for r in top..top + 7 {
                for c in left..left + 4 {
                    // hollow glyphs: stroke pixels are missing
                    if r == top || r == top + 6 || c == left || (g % 2 == 0 && r == top + 3) {
                        v[r * w + c] = 0.0;
                    }
                }
            }
        }
    }
    write_image(
        dir,
        "text.pgm",
        &Signal::new(v, Shape::new(h, w, 1)).unwrap(),
        255,
    )
}

#[test]
fn text_overlay_inpainting_passes_residual_verdicts() {
    let tmp = TempDir::new().unwrap();
    let spec = write_json(tmp.path(), "texture.json", &texture_spec());
    let mask = text_overlay_mask(tmp.path());
    let runs = 20;
    let mut passed = 0;
    for seed in 0..runs {
        let out = tmp.path().join(format!("run{seed}"));
        let result = postsample(&[
            "inpaint",
            "--input",
            "synthetic:48x48x3",
            "--add-noise",
            "--sigma0",
            "0.2",
            "--sigma-minus-k",
            "1.0",
            "--mask",
            p(&mask),
            "--seed",
            &seed.to_string(),
            "--denoiser",
            p(&spec),
            "--out-dir",
            p(&out),
        ]);
        assert_eq!(
            code(&result),
            0,
            "{}",
            String::from_utf8_lossy(&result.stderr)
        );
        let m = manifest(&out);
        assert_eq!(m["mask_coverage"], "partial");
        if m["chains"][0]["passed"] == true {
            passed += 1;
        }
    }
    assert!(passed * 10 >= runs * 9, "{passed}/{runs} runs passed");
}

fn gray(value: f64, shape: Shape) -> Signal {
    Signal::new(vec![value; shape.len()], shape).unwrap()
}

#[test]
fn validate_outcomes() {
    let tmp = TempDir::new().unwrap();
    let shape = Shape::new(64, 64, 1);
    let restored = write_image(tmp.path(), "restored.pgm", &gray(0.5, shape), 65_535);
    let sigma0 = 0.05;
    let mut s = RandomStream::new(11);
    let gaussian: Vec<f64> = (0..shape.len())
        .map(|_| 0.5 + sigma0 * s.next_normal())
        .collect();
    let noisy = write_image(
        tmp.path(),
        "noisy.pgm",
        &Signal::new(gaussian, shape).unwrap(),
        65_535,
    );
    let ok = postsample(&[
        "validate",
        "--noisy",
        p(&noisy),
        "--restored",
        p(&restored),
        "--sigma0",
        "0.05",
    ]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let report: Value = serde_json::from_str(&stdout(&ok)).unwrap();
    assert_eq!(report["white"], true);
    assert!(report["normality_p"].as_f64().unwrap() >= 0.05);

    // uniform residual with the same std
    let half_width = sigma0 * 3f64.sqrt();
    let uniform: Vec<f64> = (0..shape.len())
        .map(|_| 0.5 + half_width * (2.0 * s.next_uniform() - 1.0))
        .collect();
    let noisy_u = write_image(
        tmp.path(),
        "uniform.pgm",
        &Signal::new(uniform, shape).unwrap(),
        65_535,
    );
    let bad = postsample(&[
        "validate",
        "--noisy",
        p(&noisy_u),
        "--restored",
        p(&restored),
        "--sigma0",
        "0.05",
    ]);
    assert_eq!(code(&bad), 1);
    let report: Value = serde_json::from_str(&stdout(&bad)).unwrap();
    assert_eq!(report["gaussian"], false);

    let same = postsample(&[
        "validate",
        "--noisy",
        p(&noisy),
        "--restored",
        p(&noisy),
        "--sigma0",
        "0.05",
    ]);
    assert_ne!(code(&same), 0);
    assert!(String::from_utf8_lossy(&same.stderr)
        .to_lowercase()
        .contains("degenerate"));

    let other = write_image(
        tmp.path(),
        "small.pgm",
        &gray(0.5, Shape::new(8, 8, 1)),
        255,
    );
    assert_eq!(
        code(&postsample(&[
            "validate",
            "--noisy",
            p(&noisy),
            "--restored",
            p(&other),
            "--sigma0",
            "0.05"
        ])),
        2
    );
}

#[test]
fn oracle_compare_fixtures() {
    let tmp = TempDir::new().unwrap();
    let conjugate = write_json(
        tmp.path(),
        "conj.json",
        &DenoiserSpec::gaussian(0.0, 1.0).unwrap(),
    );
    let ok = postsample(&[
        "oracle-compare",
        "--denoiser",
        p(&conjugate),
        "--y",
        "0.5",
        "--sigma0",
        "0.5",
        "--steps",
        "50",
        "--seed",
        "1",
    ]);
    assert_eq!(
        code(&ok),
        0,
        "{}{}",
        stdout(&ok),
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(stdout(&ok).contains("within tolerance"));

    let bimodal = write_json(
        tmp.path(),
        "bimodal.json",
        &DenoiserSpec::gmm(
            vec![0.5, 0.5],
            vec![(-1.0).into(), 1.0.into()],
            vec![0.01, 0.01],
        )
        .unwrap(),
    );
    let out = postsample(&[
        "oracle-compare",
        "--denoiser",
        p(&bimodal),
        "--y",
        "0",
        "--sigma0",
        "0.75",
        "--steps",
        "50",
        "--seed",
        "13",
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    let share_line = text
        .lines()
        .skip_while(|l| !l.starts_with("mode"))
        .nth(1)
        .unwrap();
    let share: f64 = share_line
        .split_whitespace()
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.35..=0.65).contains(&share), "{share_line}");

    let two_d = write_json(
        tmp.path(),
        "two_d.json",
        &DenoiserSpec::gmm(
            vec![0.2, 0.5, 0.3],
            vec![
                vec![-0.5, 0.3].into(),
                vec![0.5, 0.0].into(),
                vec![0.0, -0.5].into(),
            ],
            vec![0.15, 0.2, 0.1],
        )
        .unwrap(),
    );
    let out = postsample(&[
        "oracle-compare",
        "--denoiser",
        p(&two_d),
        "--y",
        "0.2,-0.1",
        "--sigma0",
        "0.4",
        "--steps",
        "50",
        "--seed",
        "12",
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));

    let diverged = postsample(&[
        "oracle-compare",
        "--denoiser",
        p(&conjugate),
        "--y",
        "0.5",
        "--sigma0",
        "0.5",
        "--epsilon",
        "100",
        "--chains",
        "10",
    ]);
    assert_eq!(code(&diverged), 3);
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("diverged"));
}
