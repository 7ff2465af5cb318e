use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr::{null, null_mut};

use carfollow::baselines::IdmParams;
use carfollow::model_file::{ModelFile, ModelKind};
use carfollow_ffi::*;

fn idm() -> IdmParams {
    IdmParams {
        a_max: 1.0,
        a_conf: 1.5,
        v_desired: 15.0,
        beta: 4.0,
        s_jam: 2.0,
        t_headway: 1.2,
    }
}

fn save_idm(dir: &std::path::Path) -> CString {
    let path = dir.join("idm.json");
    ModelFile::new("idm", None, None, ModelKind::Idm(idm()))
        .save(&path)
        .unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(cf_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn scalar_functions_match_the_library() {
    let p = CfIdmParams {
        a_max: 1.0,
        a_conf: 1.5,
        v_desired: 15.0,
        beta: 4.0,
        s_jam: 2.0,
        t_headway: 1.2,
    };
    let mut a = f64::NAN;
    assert_eq!(
        unsafe { cf_idm_acceleration(&p, 10.0, -1.0, 25.0, &mut a) },
        CfStatus::Ok
    );
    assert_eq!(
        a,
        carfollow::baselines::idm_acceleration(&idm(), 10.0, -1.0, 25.0).unwrap()
    );

    let s = CfState {
        v_follow: 0.1,
        dv: 0.0,
        gap: 10.0,
    };
    let mut next = s;
    assert_eq!(
        unsafe { cf_step_state(&s, -10.0, 0.0, 0.1, &mut next) },
        CfStatus::Ok
    );
    assert_eq!(next.v_follow, 0.0);
    assert_eq!(next.dv, 0.0);
    assert_eq!(next.gap, 10.0);

    assert_eq!(
        unsafe { cf_step_state(&s, f64::NAN, 0.0, 0.1, &mut next) },
        CfStatus::Numerical
    );

    let (sim, obs) = ([1.0, 2.0], [0.0, 0.0]);
    let mut e = 0.0;
    assert_eq!(
        unsafe { cf_rmspe(sim.as_ptr(), obs.as_ptr(), 2, &mut e) },
        CfStatus::Numerical
    );
    assert!(last_error().contains("zero"));
}

#[test]
fn load_errors_are_reported() {
    let mut m = null_mut();
    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(
        unsafe { cf_model_load(missing.as_ptr(), &mut m) },
        CfStatus::Io
    );
    assert!(m.is_null());
    assert!(last_error().contains("/nonexistent/model.json"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"kind\": 3}").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { cf_model_load(bad.as_ptr(), &mut m) },
        CfStatus::Format
    );
    assert_eq!(
        unsafe { cf_model_load(null(), &mut m) },
        CfStatus::NullPointer
    );
    unsafe { cf_model_free(null_mut()) };
}

#[test]
fn simulate_matches_rollout_and_policy_steps() {
    let dir = tempfile::tempdir().unwrap();
    let path = save_idm(dir.path());
    let mut m = null_mut();
    assert_eq!(
        unsafe { cf_model_load(path.as_ptr(), &mut m) },
        CfStatus::Ok
    );
    assert_eq!(
        unsafe { CStr::from_ptr(cf_model_kind(m)) }
            .to_str()
            .unwrap(),
        "idm"
    );

    let n = 50;
    let vl: Vec<f64> = (0..n).map(|i| 12.0 + (i as f64 * 0.2).sin()).collect();
    let (vf, gap, af) = (vec![11.0; n], vec![20.0; n], vec![0.0; n]);
    let mut per = null_mut();
    let st = unsafe {
        cf_period_new(
            0.1,
            vf.as_ptr(),
            vl.as_ptr(),
            gap.as_ptr(),
            af.as_ptr(),
            n,
            &mut per,
        )
    };
    assert_eq!(st, CfStatus::Ok);
    assert_eq!(unsafe { cf_period_len(per) }, n);

    let (mut g, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (mut len, mut collided) = (0usize, -1i32);
    let st = unsafe {
        cf_simulate(
            m,
            per,
            g.as_mut_ptr(),
            v.as_mut_ptr(),
            n,
            &mut len,
            &mut collided,
        )
    };
    assert_eq!((st, len, collided), (CfStatus::Ok, n, 0));

    // Step the same rollout by hand through a policy handle.
    let mut pol = null_mut();
    assert_eq!(unsafe { cf_policy_new(m, per, &mut pol) }, CfStatus::Ok);
    let mut s = CfState {
        v_follow: 11.0,
        dv: vl[0] - 11.0,
        gap: 20.0,
    };
    assert_eq!(unsafe { cf_policy_reset(pol, &s) }, CfStatus::Ok);
    for i in 1..n {
        let mut a = 0.0;
        assert_eq!(unsafe { cf_policy_act(pol, &s, &mut a) }, CfStatus::Ok);
        let mut next = s;
        assert_eq!(
            unsafe { cf_step_state(&s, a, vl[i], 0.1, &mut next) },
            CfStatus::Ok
        );
        s = next;
        assert_eq!(s.gap, g[i]);
        assert_eq!(s.v_follow, v[i]);
    }
    unsafe {
        cf_policy_free(pol);
        cf_period_free(per);
        cf_model_free(m);
    }
}

#[test]
fn short_period_is_rejected() {
    let x = [1.0];
    let mut per = null_mut();
    let st = unsafe {
        cf_period_new(
            0.1,
            x.as_ptr(),
            x.as_ptr(),
            x.as_ptr(),
            x.as_ptr(),
            1,
            &mut per,
        )
    };
    assert_eq!(st, CfStatus::InvalidArgument);
    assert!(per.is_null());
}

fn ffi_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// The static library sits next to the test binary's `deps` directory.
fn staticlib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libcarfollow_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_against_header_and_staticlib() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let Some(lib) = staticlib() else {
        eprintln!("skipping: static library not built");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(ffi_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(ffi_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let model = save_idm(dir.path());
    let run = Command::new(&exe)
        .arg(model.to_str().unwrap())
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
