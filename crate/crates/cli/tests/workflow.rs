//! End-to-end run of every subcommand on a small synthetic scene, plus the
//! exit-code contract.

use mesh_denoise::io::{load_mesh_auto, save_mesh_auto};
use mesh_denoise::shapes::{grid_plane, icosphere};
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mesh-denoise"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

#[test]
fn full_workflow_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let clean_dir = root.join("clean");
    let noisy_dir = root.join("noisy");
    std::fs::create_dir_all(&clean_dir).unwrap();
    std::fs::create_dir_all(&noisy_dir).unwrap();

    let sphere = icosphere(1.0, 2);
    save_mesh_auto(&sphere, clean_dir.join("sphere.obj")).unwrap();
    let plane = grid_plane(12, 12, 0.4);
    save_mesh_auto(&plane, clean_dir.join("plane.obj")).unwrap();

    // synth-noise both meshes into the noisy directory (with sidecars)
    for name in ["sphere.obj", "plane.obj"] {
        run_ok(bin()
            .arg("synth-noise")
            .arg("--in")
            .arg(clean_dir.join(name))
            .arg("--kind")
            .arg("gaussian-normal")
            .arg("--level")
            .arg("0.2")
            .arg("--seed")
            .arg("7")
            .arg("--out")
            .arg(noisy_dir.join(name)));
        assert!(noisy_dir.join(format!("{name}.noise.toml")).exists());
    }
    let noisy_sphere = load_mesh_auto(noisy_dir.join("sphere.obj")).unwrap();
    assert!(noisy_sphere.same_connectivity(&sphere));

    // make-dataset pairs the two directories by file name. The desk preset
    // wants 256-face patches; both meshes are larger than that.
    let ds_path = root.join("patches.mdds");
    let out = run_ok(bin()
        .arg("make-dataset")
        .arg("--noisy")
        .arg(&noisy_dir)
        .arg("--clean")
        .arg(&clean_dir)
        .arg("--preset")
        .arg("desk")
        .arg("--out")
        .arg(&ds_path)
        .arg("--seed")
        .arg("3"));
    assert!(out.contains("N=256"), "{out}");
    let ds = mesh_denoise::dataset::read_dataset(&ds_path).unwrap();
    assert_eq!(ds.len(), 32, "16 patches from each of 2 meshes");

    // train with a tiny config file (a full desk run is minutes, not CI)
    let config_path = root.join("train.toml");
    std::fs::write(
        &config_path,
        r#"
batch_size = 8
epochs = 2
rng_seed = 1

[model]
channels = 8
k1 = 2
k2 = 3
k3 = 4
k_res = 2
num_res_units = 1
fusion_hidden = 8
head_hidden = 8
"#,
    )
    .unwrap();
    let run_dir = root.join("run");
    let out = run_ok(bin()
        .arg("train")
        .arg("--dataset")
        .arg(&ds_path)
        .arg("--config")
        .arg(&config_path)
        .arg("--out")
        .arg(&run_dir));
    assert!(out.contains("trained 2 epochs"), "{out}");
    let ckpt = run_dir.join("model.mdck");
    assert!(ckpt.exists());
    assert!(run_dir.join("loss.csv").exists());

    // denoise the noisy sphere
    let denoised_path = root.join("denoised.obj");
    let normals_csv = root.join("normals.csv");
    run_ok(bin()
        .arg("denoise")
        .arg("--in")
        .arg(noisy_dir.join("sphere.obj"))
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--iters")
        .arg("3")
        .arg("--patch-size")
        .arg("64")
        .arg("--out")
        .arg(&denoised_path)
        .arg("--dump-normals")
        .arg(&normals_csv));
    let denoised = load_mesh_auto(&denoised_path).unwrap();
    assert!(denoised.same_connectivity(&sphere));
    let csv = std::fs::read_to_string(&normals_csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + sphere.face_count());

    // eval with an error map
    let ply = root.join("error.ply");
    let angles_csv = root.join("angles.csv");
    let out = run_ok(bin()
        .arg("eval")
        .arg("--gt")
        .arg(clean_dir.join("sphere.obj"))
        .arg("--denoised")
        .arg(&denoised_path)
        .arg("--error-map")
        .arg(&ply)
        .arg("--csv")
        .arg(&angles_csv));
    assert!(out.starts_with("theta = "), "{out}");
    assert!(ply.exists());
    assert_eq!(
        std::fs::read_to_string(&angles_csv).unwrap().lines().count(),
        1 + sphere.face_count()
    );

    // sweep two noise levels with the trained checkpoint
    let sweep_config = root.join("sweep.toml");
    std::fs::write(
        &sweep_config,
        format!(
            r#"
suite = "noise-level"
checkpoint = {ckpt:?}
meshes = [{mesh:?}]
levels = [0.1, 0.2]
iterations = 2
patch_size = 48
"#,
            ckpt = ckpt.to_str().unwrap(),
            mesh = clean_dir.join("sphere.obj").to_str().unwrap()
        ),
    )
    .unwrap();
    let sweep_csv = root.join("sweep.csv");
    run_ok(bin()
        .arg("sweep")
        .arg("--suite")
        .arg("noise-level")
        .arg("--config")
        .arg(&sweep_config)
        .arg("--out")
        .arg(&sweep_csv));
    let text = std::fs::read_to_string(&sweep_csv).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("noise-level,level:0.1"));
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    // unknown flag -> usage (1)
    let out = bin().arg("denoise").arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // missing subcommand -> usage (1)
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // invalid noise kind -> usage (1)
    let out = bin()
        .args(["synth-noise", "--in", "x.obj", "--kind", "salt", "--level", "0.1", "--out", "y.obj"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // nonexistent input mesh -> data error (2)
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["synth-noise", "--kind", "uniform", "--level", "0.1"])
        .arg("--in")
        .arg(dir.path().join("missing.obj"))
        .arg("--out")
        .arg(dir.path().join("out.obj"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // corrupt dataset -> data error (2)
    let bad = dir.path().join("bad.mdds");
    std::fs::write(&bad, b"not a dataset").unwrap();
    let out = bin()
        .arg("train")
        .arg("--dataset")
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn denoise_rejects_mismatched_checkpoint_payload() {
    // A checkpoint whose tensors disagree with its own header must be
    // rejected at load time (data error, exit 2).
    let dir = tempfile::tempdir().unwrap();
    let mesh_path = dir.path().join("m.obj");
    save_mesh_auto(&icosphere(1.0, 1), &mesh_path).unwrap();
    let ckpt = dir.path().join("junk.mdck");
    std::fs::write(&ckpt, b"MDCKjunkjunkjunk").unwrap();
    let out = bin()
        .arg("denoise")
        .arg("--in")
        .arg(&mesh_path)
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--out")
        .arg(dir.path().join("out.obj"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn paths_through_geodesic_growth_are_stable() {
    // Regression guard: two make-dataset invocations with the same seed
    // produce byte-identical files.
    let dir = tempfile::tempdir().unwrap();
    let clean_dir = dir.path().join("clean");
    let noisy_dir = dir.path().join("noisy");
    std::fs::create_dir_all(&clean_dir).unwrap();
    std::fs::create_dir_all(&noisy_dir).unwrap();
    let sphere = icosphere(1.0, 2);
    save_mesh_auto(&sphere, clean_dir.join("s.obj")).unwrap();
    run_ok(bin()
        .arg("synth-noise")
        .arg("--in")
        .arg(clean_dir.join("s.obj"))
        .arg("--kind")
        .arg("uniform")
        .arg("--level")
        .arg("0.3")
        .arg("--seed")
        .arg("11")
        .arg("--out")
        .arg(noisy_dir.join("s.obj")));
    let make = |out: &Path| {
        run_ok(bin()
            .arg("make-dataset")
            .arg("--noisy")
            .arg(&noisy_dir)
            .arg("--clean")
            .arg(&clean_dir)
            .arg("--preset")
            .arg("desk")
            .arg("--out")
            .arg(out)
            .arg("--seed")
            .arg("4"));
    };
    let a = dir.path().join("a.mdds");
    let b = dir.path().join("b.mdds");
    make(&a);
    make(&b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
