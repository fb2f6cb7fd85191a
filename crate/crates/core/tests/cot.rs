use std::collections::BTreeMap;
use std::sync::Arc;

use visa_core::cot::{
    find_leak, run_cot, scripted_output, solution_match, stage_payload, validate_stage7, Check, CotRecord,
    StageEndpoints,
};
use visa_core::dataset::{instance_seed, write_instance};
use visa_core::expr::{free_constants, parse, print, with_constants};
use visa_core::gateway::stub::{StubReply, StubServer};
use visa_core::gateway::EndpointConfig;
use visa_core::instance::{generate_instance, Instance, Split};
use visa_core::scenario::list_scenarios;

fn instance(si: usize, k: usize) -> Instance {
    let s = &list_scenarios()[si];
    generate_instance(s, instance_seed(21, si, k), format!("{}-{k:04}", s.slug), Split::GoldCot).unwrap()
}

fn scripted_record(inst: &Instance, leak: bool) -> CotRecord {
    let mut rec = CotRecord::new(inst);
    for k in 1..=6 {
        rec.stages.insert(k, scripted_output(k, inst, leak));
    }
    rec
}

#[test]
fn blind_stages_never_see_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    for si in 0..list_scenarios().len() {
        for k in 0..3 {
            let inst = instance(si, k);
            write_instance(dir.path(), &inst, k == 0).unwrap();
            let mut rec = CotRecord::new(&inst);
            rec.stages.insert(1, scripted_output(1, &inst, false));
            if k == 0 {
                let p1 = stage_payload(1, dir.path(), &inst, &rec).unwrap();
                assert_eq!(p1.images.len(), 2);
                assert_eq!(find_leak(&p1.text, &inst.solution), None, "{}", inst.id);
            }
            let p2 = stage_payload(2, dir.path(), &inst, &rec).unwrap();
            assert!(p2.images.is_empty());
            assert_eq!(find_leak(&p2.text, &inst.solution), None, "{}", inst.id);
            assert!(p2.text.contains("radial_symmetry_score"));
        }
    }
}

#[test]
fn later_stages_carry_their_markers() {
    let dir = tempfile::tempdir().unwrap();
    let inst = instance(12, 0);
    write_instance(dir.path(), &inst, false).unwrap();
    let rec = scripted_record(&inst, false);
    let p3 = stage_payload(3, dir.path(), &inst, &rec).unwrap();
    assert!(p3.text.contains(&format!("Ground truth solution: u(x,y) = {}", inst.solution)));
    let p5 = stage_payload(5, dir.path(), &inst, &rec).unwrap();
    assert!(p5.text.contains("Method 1") && p5.text.contains("PARAMETER ESTIMATES:"));
    let p6 = stage_payload(6, dir.path(), &inst, &rec).unwrap();
    assert!(p6.text.contains("DO NOT say"));
    assert!(p6.text.contains("300-800 words"));
    let empty = CotRecord::new(&inst);
    assert!(stage_payload(4, dir.path(), &inst, &empty).is_err());
}

#[test]
fn scripted_records_pass_every_check() {
    for (si, _) in list_scenarios().iter().enumerate() {
        let inst = instance(si, 1);
        let v = validate_stage7(&scripted_record(&inst, false), &inst);
        assert!(v.iter().all(|v| v.pass), "{}: {v:?}", inst.id);
        let v = validate_stage7(&scripted_record(&inst, true), &inst);
        let leak = v.iter().find(|v| v.check == Check::Leak).unwrap();
        assert!(!leak.pass && leak.span.is_some(), "{}", inst.id);
    }
}

#[test]
fn one_constant_off_fails_solution_match() {
    let inst = instance(5, 0);
    let e = parse(&inst.solution).unwrap();
    let mut c: Vec<f64> = free_constants(&e).iter().map(|s| s.value).collect();
    c[0] *= 1.1;
    let off = print(&with_constants(&e, &c));
    let v = solution_match(&format!("<solution>{off}</solution>"), &inst);
    assert!(!v.pass, "{off}");
    assert!(solution_match(&format!("<solution>{}</solution>", inst.solution), &inst).pass);
    let swapped = inst.solution.replace("sin", "cos");
    if swapped != inst.solution {
        assert!(!solution_match(&format!("<solution>{swapped}</solution>"), &inst).pass);
    }
    assert!(!solution_match("no tags", &inst).pass);
}

fn stub_for(instances: &[Instance], leak: bool) -> StubServer {
    let by_id: Arc<BTreeMap<String, Instance>> = Arc::new(instances.iter().map(|i| (i.id.clone(), i.clone())).collect());
    StubServer::start(move |req| {
        let inst = &by_id[req.instance().unwrap()];
        let k: u8 = req.stage().unwrap().trim_start_matches("stage").parse().unwrap();
        StubReply::Content(scripted_output(k, inst, leak))
    })
    .unwrap()
}

fn endpoints(server: &StubServer) -> StageEndpoints {
    let mut cfg = EndpointConfig::new(&server.base_url(), "stub");
    cfg.backoff_ms = 1;
    cfg.retries = 1;
    StageEndpoints::uniform(cfg)
}

fn small_set(dir: &std::path::Path) -> Vec<Instance> {
    let out: Vec<Instance> = (0..6).map(|si| instance(si * 5, 0)).collect();
    for inst in &out {
        write_instance(dir, inst, true).unwrap();
    }
    out
}

#[test]
fn stub_pipeline_golds_compliant_and_resumes_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let insts = small_set(dir.path());
    let server = stub_for(&insts, false);
    let eps = endpoints(&server);
    let cot = dir.path().join("cot");
    let first = run_cot(dir.path(), &insts, &cot, &eps, false).unwrap();
    assert_eq!(first.gold, insts.len());
    assert_eq!(first.counts.queried, 6 * insts.len());
    assert_eq!(server.requests(), 6 * insts.len());
    for inst in &insts {
        assert!(cot.join(&inst.id).join("stage6.txt").exists());
        assert!(cot.join(&inst.id).join("record.json").exists());
    }

    let again = run_cot(dir.path(), &insts, &cot, &eps, false).unwrap();
    assert_eq!(again.counts.queried, 0);
    assert_eq!(server.requests(), 6 * insts.len());
    assert_eq!(again.records, first.records);
    assert_eq!(std::fs::read_to_string(&again.manifest).unwrap().lines().count(), insts.len());

    let forced = run_cot(dir.path(), &insts[..1], &cot, &eps, true).unwrap();
    assert_eq!(forced.counts.queried, 6);
}

#[test]
fn leaking_rationales_are_never_gold() {
    let dir = tempfile::tempdir().unwrap();
    let insts = small_set(dir.path());
    let server = stub_for(&insts, true);
    let out = run_cot(dir.path(), &insts, &dir.path().join("cot"), &endpoints(&server), false).unwrap();
    assert_eq!(out.gold, 0);
    for r in &out.records {
        assert_eq!(r.failed_checks(), vec![Check::Leak]);
    }
}

#[test]
fn transport_failure_leaves_instance_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let insts = small_set(dir.path());
    let server = StubServer::start(|req| match req.stage() {
        Some("stage4") => StubReply::Status(503),
        _ => StubReply::Content("SUMMARY:\n".into()),
    })
    .unwrap();
    let out = run_cot(dir.path(), &insts[..2], &dir.path().join("cot"), &endpoints(&server), false).unwrap();
    assert_eq!(out.gold, 0);
    for r in &out.records {
        assert_eq!(r.incomplete.as_ref().map(|(s, _)| *s), Some(4));
        assert!(r.verdicts.is_empty());
    }
}
