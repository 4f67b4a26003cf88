use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use optocool_ffi::*;

fn last_error() -> String {
    let p = oc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn reference(c_q: f64) -> *mut OcSystem {
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { oc_system_reference(c_q, &mut sys) }, OcStatus::Ok);
    sys
}

#[test]
fn config_errors_name_the_key() {
    let toml = CString::new("[feedback]\ngian = 1\n").unwrap();
    let mut sys = ptr::null_mut();
    let status = unsafe { oc_system_from_toml(toml.as_ptr(), &mut sys) };
    assert_eq!(status, OcStatus::Config);
    assert!(sys.is_null());
    assert!(last_error().contains("feedback.gian"));
}

#[test]
fn bundled_config_matches_reference_handle() {
    let toml = CString::new(optocool::config::REFERENCE_TOML).unwrap();
    let mut a = ptr::null_mut();
    assert_eq!(
        unsafe { oc_system_from_toml(toml.as_ptr(), &mut a) },
        OcStatus::Ok
    );
    let b = reference(2.4);
    let (mut ba, mut bb) = (OcNoiseBudget::default(), OcNoiseBudget::default());
    unsafe {
        assert_eq!(oc_system_noise_budget(a, &mut ba), OcStatus::Ok);
        assert_eq!(oc_system_noise_budget(b, &mut bb), OcStatus::Ok);
        oc_system_free(a);
        oc_system_free(b);
    }
    assert!((ba.n_tot / bb.n_tot - 1.0).abs() < 1e-12);
    assert!((ba.eta / bb.eta - 1.0).abs() < 1e-12);
}

#[test]
fn optimize_then_report() {
    let sys = reference(2.4);
    let mut opt = OcOperatingPoint::default();
    let mut here = OcOperatingPoint::default();
    unsafe {
        assert_eq!(oc_system_optimize_gain(sys, 30, &mut opt), OcStatus::Ok);
        assert_eq!(oc_system_operating_point(sys, &mut here), OcStatus::Ok);
        oc_system_free(sys);
    }
    assert_eq!(here.gain, opt.gain);
    assert!((here.nbar - opt.nbar).abs() < 1e-9);
    assert!(opt.nbar > 0.1 && opt.nbar < 0.4, "{}", opt.nbar);
}

#[test]
fn phase_controls_damping_sign() {
    let sys = reference(2.4);
    let mut cool = 0.0;
    let (mut a, mut b) = (OcOperatingPoint::default(), OcOperatingPoint::default());
    unsafe {
        assert_eq!(oc_system_use_cooling_phase(sys, &mut cool), OcStatus::Ok);
        assert_eq!(oc_system_set_gain(sys, 0.01), OcStatus::Ok);
        assert_eq!(oc_system_operating_point(sys, &mut a), OcStatus::Ok);
        assert_eq!(
            oc_system_set_phase(sys, cool + std::f64::consts::PI),
            OcStatus::Ok
        );
        let status = oc_system_operating_point(sys, &mut b);
        assert!(status == OcStatus::Ok || status == OcStatus::Unstable);
        if status == OcStatus::Ok {
            assert!(b.gamma_eff_hz < a.gamma_eff_hz);
        }
        assert_eq!(
            oc_system_set_phase(sys, f64::NAN),
            OcStatus::InvalidArgument
        );
        oc_system_free(sys);
    }
    assert_eq!(a.phase_rad, cool);
}

#[test]
fn null_arguments_rejected() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(
            oc_nbar_est(0.77, 1.0, ptr::null_mut()),
            OcStatus::NullPointer
        );
        assert_eq!(
            oc_system_noise_budget(ptr::null(), ptr::null_mut()),
            OcStatus::NullPointer
        );
        assert_eq!(
            oc_system_spectrum(
                ptr::null(),
                OcSpectrumKind::OpenMeasured,
                ptr::null(),
                0,
                ptr::null_mut()
            ),
            OcStatus::NullPointer
        );
        assert_eq!(
            oc_sideband_nbar_min(12.9e6, 4.2e6, 1.139e6, &mut v),
            OcStatus::InvalidArgument
        );
        assert_eq!(oc_fit_parameter_count(ptr::null()), 0);
        assert!(oc_fit_parameter_name(ptr::null(), 0).is_null());
        oc_system_free(ptr::null_mut());
        oc_fit_free(ptr::null_mut());
        oc_string_free(ptr::null_mut());
    }
}

#[test]
fn sideband_floor_and_estimation_limit() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(
            oc_sideband_nbar_min(12.9e6, -4.2e6, 1.139e6, &mut v),
            OcStatus::Ok
        );
        assert!((v - 2.64).abs() < 0.06, "{v}");
        assert_eq!(oc_nbar_est(1.0, f64::INFINITY, &mut v), OcStatus::Ok);
        assert_eq!(v, 0.0);
    }
}

#[test]
fn periodogram_is_seeded_and_in_place() {
    let expected = vec![2.0; 500];
    let mut a = vec![0.0; 500];
    let mut b = expected.clone();
    unsafe {
        assert_eq!(
            oc_synth_periodogram(expected.as_ptr(), 500, 20, 3, a.as_mut_ptr()),
            OcStatus::Ok
        );
        assert_eq!(
            oc_synth_periodogram(b.as_ptr(), 500, 20, 3, b.as_mut_ptr()),
            OcStatus::Ok
        );
        assert_eq!(
            oc_synth_periodogram(expected.as_ptr(), 500, 0, 3, a.as_mut_ptr()),
            OcStatus::InvalidArgument
        );
    }
    assert_eq!(a, b);
    let mean = a.iter().sum::<f64>() / 500.0;
    assert!((mean - 2.0).abs() < 0.1);
}

#[test]
fn lorentzian_fit_through_handles() {
    let sys = reference(2.4);
    let f: Vec<f64> = (0..801).map(|k| 1.139e6 - 0.4 + 0.001 * k as f64).collect();
    let mut psd = vec![0.0; f.len()];
    let mut fit = ptr::null_mut();
    unsafe {
        assert_eq!(oc_system_set_gain(sys, 0.0), OcStatus::Ok);
        assert_eq!(
            oc_system_spectrum(
                sys,
                OcSpectrumKind::OpenMeasured,
                f.as_ptr(),
                f.len(),
                psd.as_mut_ptr()
            ),
            OcStatus::Ok
        );
        assert_eq!(
            oc_synth_periodogram(psd.as_ptr(), psd.len(), 50, 11, psd.as_mut_ptr()),
            OcStatus::Ok
        );
        assert_eq!(
            oc_fit_lorentzian(sys, f.as_ptr(), psd.as_ptr(), f.len(), 50.0, &mut fit),
            OcStatus::Ok
        );
        assert!(oc_fit_converged(fit));
        let names: Vec<String> = (0..oc_fit_parameter_count(fit))
            .map(|i| {
                CStr::from_ptr(oc_fit_parameter_name(fit, i))
                    .to_string_lossy()
                    .into_owned()
            })
            .collect();
        assert_eq!(names, ["f_eff_hz", "linewidth_eff_hz", "n_tot", "n_imp"]);
        let (mut est, mut se) = (0.0, 0.0);
        assert_eq!(oc_fit_parameter(fit, 0, &mut est, &mut se), OcStatus::Ok);
        assert!((est - 1.139e6).abs() < 5.0 * se + 1e-3, "{est} {se}");
        let mut json = ptr::null_mut();
        assert_eq!(oc_fit_to_json(fit, &mut json), OcStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        oc_string_free(json);
        oc_fit_free(fit);
        oc_system_free(sys);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["model"], "lorentzian");
    }
}

#[test]
fn heating_fit_through_handles() {
    let t: Vec<f64> = (-20..200).map(|k| k as f64 * 1e-3).collect();
    let y: Vec<f64> = t
        .iter()
        .map(|&t| optocool::feedback::heating_value(2.0, 60.0, 22.8, t))
        .collect();
    let mut fit = ptr::null_mut();
    let (mut est, mut se) = (0.0, 0.0);
    unsafe {
        assert_eq!(
            oc_fit_heating(t.as_ptr(), y.as_ptr(), t.len(), &mut fit),
            OcStatus::Ok
        );
        assert_eq!(oc_fit_parameter(fit, 2, &mut est, &mut se), OcStatus::Ok);
        oc_fit_free(fit);
    }
    assert!((est - 22.8).abs() < 1e-4, "{est}");
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/optocool.h");
    assert!(header.exists(), "header not generated");
    let lib = target_dir().join("liboptocool_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let exe = tempfile::tempdir().unwrap().keep().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "{stdout}{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.starts_with("ok "), "{stdout}");
}
