use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use infocomp::cli::gen::{random_cpj, ProtocolBundle};
use infocomp::cpj::{sample_path, InstanceParams};
use infocomp::info::Dist;
use infocomp::onesamp::{run_sampler, SamplerConfig};
use infocomp::prototree::{compression_test_protocol, internal_info_cost};
use infocomp::sharedrand::SharedSeed;
use infocomp_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe {
        ic_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn seed(v: u128) -> IcSeed {
    IcSeed {
        bytes: v.to_be_bytes(),
    }
}

unsafe fn dist(probs: &[f64]) -> *mut IcDist {
    let mut h = ptr::null_mut();
    assert_eq!(
        ic_dist_new(probs.as_ptr(), probs.len(), &mut h),
        IcStatus::Ok
    );
    h
}

#[test]
fn divergence_through_handles() {
    unsafe {
        let p = dist(&[0.5, 0.5, 0.0, 0.0]);
        let q = dist(&[0.25; 4]);
        let mut d = 0.0;
        assert_eq!(ic_kl_divergence(p, q, &mut d), IcStatus::Ok);
        assert!((d - 1.0).abs() < 1e-12);
        assert_eq!(ic_kl_divergence(q, p, &mut d), IcStatus::Ok);
        assert!(d.is_infinite());
        ic_dist_free(p);
        ic_dist_free(q);
        ic_dist_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut h = ptr::null_mut();
        let bad = [0.5, 0.2];
        assert_eq!(ic_dist_new(bad.as_ptr(), 2, &mut h), IcStatus::Invalid);
        assert!(h.is_null());
        assert!(last_error().contains("distribution"), "{}", last_error());

        assert_eq!(ic_dist_new(ptr::null(), 2, &mut h), IcStatus::NullPointer);
        assert!(last_error().contains("probs"));

        let mut d = 0.0;
        assert_eq!(
            ic_kl_divergence(ptr::null(), ptr::null(), &mut d),
            IcStatus::NullPointer
        );

        let mut proto = ptr::null_mut();
        let json = CString::new("{not json").unwrap();
        assert_eq!(
            ic_protocol_from_json(json.as_ptr(), &mut proto),
            IcStatus::Parse
        );

        let mut s = seed(0);
        let hex = CString::new("zz").unwrap();
        assert_eq!(ic_seed_parse(hex.as_ptr(), &mut s), IcStatus::Invalid);

        let ok = dist(&[1.0]);
        ic_dist_free(ok);
        assert_eq!(last_error(), "");
        assert_eq!(ic_last_error(ptr::null_mut(), 0), 0);
    }
}

#[test]
fn truncated_error_copy_reports_full_length() {
    unsafe {
        let mut h = ptr::null_mut();
        let bad = [2.0];
        assert_eq!(ic_dist_new(bad.as_ptr(), 1, &mut h), IcStatus::Invalid);
        let mut small = [1 as c_char; 4];
        let full = ic_last_error(small.as_mut_ptr(), small.len());
        assert!(full > 3);
        assert_eq!(small[3], 0);
    }
}

#[test]
fn sampler_matches_the_engine() {
    let p = Dist::new(vec![0.5, 0.25, 0.25, 0.0]).unwrap();
    let q = Dist::uniform(4).unwrap();
    unsafe {
        let (hp, hq) = (dist(p.probs()), dist(q.probs()));
        for i in 0..50u128 {
            let s = seed(1000 + i);
            let mut r = IcSampleResult::default();
            assert_eq!(ic_sample(hp, hq, &s, 0.01, &mut r), IcStatus::Ok);
            let direct = run_sampler(
                &p,
                &q,
                &SharedSeed::from_u128(1000 + i),
                SamplerConfig::for_pair(&p, &q, 0.01).unwrap(),
            )
            .unwrap();
            assert_eq!(r.a as usize, direct.a);
            assert_eq!((r.has_b != 0).then_some(r.b as usize), direct.b);
            assert_eq!(
                (r.bits_a, r.bits_b, r.k),
                (direct.stats.bits_a, direct.stats.bits_b, direct.stats.k)
            );
        }
        ic_dist_free(hp);
        ic_dist_free(hq);
    }
}

#[test]
fn protocol_info_and_compression() {
    let (protocol, mu) = compression_test_protocol();
    let ic = internal_info_cost(&protocol, &mu).unwrap();
    let json =
        CString::new(serde_json::to_string(&ProtocolBundle { protocol, mu }).unwrap()).unwrap();
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(ic_protocol_from_json(json.as_ptr(), &mut h), IcStatus::Ok);
        let mut info = IcInfo::default();
        assert_eq!(ic_protocol_info(h, &mut info), IcStatus::Ok);
        assert!((info.internal_ic - ic).abs() < 1e-12);
        assert!(info.internal_ic <= info.external_ic + 1e-12);
        assert_eq!(info.cc, 6);
        let mut r = IcPathResult::default();
        assert_eq!(ic_compress(h, &seed(7), 0.01, &mut r), IcStatus::Ok);
        assert!(((r.bits_a + r.bits_b) as f64) <= r.bound + 1e-9);
        assert_eq!(ic_compress(h, &seed(7), 0.9, &mut r), IcStatus::Invalid);
        ic_protocol_free(h);
    }
}

#[test]
fn cpj_sampling_matches_the_engine() {
    let f = random_cpj(InstanceParams::default(), &SharedSeed::from_u128(3)).unwrap();
    let json = CString::new(serde_json::to_string(&f).unwrap()).unwrap();
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(ic_cpj_from_json(json.as_ptr(), &mut h), IcStatus::Ok);
        let mut d = 0.0;
        assert_eq!(ic_cpj_divergence(h, &mut d), IcStatus::Ok);
        assert!(d >= 0.0);
        for i in 0..20u128 {
            let mut r = IcPathResult::default();
            assert_eq!(ic_cpj_sample(h, &seed(i), 0.01, &mut r), IcStatus::Ok);
            let direct = sample_path(&f, &SharedSeed::from_u128(i), 0.01).unwrap();
            assert_eq!((r.has_output != 0).then_some(r.output), direct.a.output);
            assert_eq!(r.bits_a + r.bits_b, direct.stats.total_bits());
            assert_eq!(
                r.matched != 0,
                direct.a.indices == direct.b.indices && direct.a.complete && direct.b.complete
            );
        }
        ic_cpj_free(h);
    }
}

#[test]
fn seeds_parse_and_derive() {
    let hex = CString::new("000102030405060708090a0b0c0d0e0f").unwrap();
    unsafe {
        let mut s = seed(0);
        assert_eq!(ic_seed_parse(hex.as_ptr(), &mut s), IcStatus::Ok);
        assert_eq!(s.bytes, core::array::from_fn(|i| i as u8));
        let mut child = seed(0);
        assert_eq!(ic_seed_derive(&s, 5, 9, &mut child), IcStatus::Ok);
        let expected = SharedSeed::from_bytes(s.bytes).derive(5, 9);
        assert_eq!(&child.bytes, expected.as_bytes());
    }
}

#[test]
fn selftest_passes_through_the_abi() {
    let mut passed = 0u8;
    unsafe {
        assert_eq!(ic_selftest(&seed(1), &mut passed), IcStatus::Ok);
    }
    assert_eq!(passed, 1);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ic_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_abi_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/infocomp.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ic_dist_new",
        "ic_sample",
        "ic_protocol_from_json",
        "ic_cpj_sample",
        "ic_last_error",
        "IC_STATUS_OK",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // Syntax-check with a C compiler when one is installed.
    let dir = std::env::temp_dir().join(format!("infocomp-h-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ IcSeed s = {{{{0}}}}; (void)s; return 0; }}\n",
            header.display()
        ),
    )
    .unwrap();
    match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        ),
        Err(_) => eprintln!("no C compiler found; skipped syntax check"),
    }
    let _ = std::fs::remove_dir_all(dir);
}
