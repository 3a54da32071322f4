use topopost_core::export::read_level_set;
use topopost_core::levelset::SolidPads;
use topopost_core::pipeline::{preset, run_pipeline, run_study, Manifest, RunConfig, RunOptions, Study, MANIFEST_FILE};

fn small_mbb() -> RunConfig {
    let mut c = preset("mbb2d", false).unwrap();
    c.name = "small".into();
    c.dims = vec![24, 12];
    c.load_case.loads[0].at.y = Some(12.0);
    c.load_case.supports[1].at.x = Some(24.0);
    c.stage1.iterations = 30;
    c.stage3.iterations_per_phase = 4;
    c
}

#[test]
fn small_mbb_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_mbb();
    let report = run_pipeline(&config, &RunOptions::new(dir.path())).unwrap();

    let ex = report.extraction.as_ref().unwrap();
    assert!(
        (ex.volume_fraction - config.volume_fraction).abs() <= 1e-3,
        "{}",
        ex.volume_fraction
    );
    let s3 = report.stage3.as_ref().unwrap();
    assert!(s3.final_volume_fraction / config.volume_fraction <= 1.0 + 1e-3);
    assert!(s3.final_compliance < report.stage1_reevaluated.unwrap());

    let manifest = Manifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.stages.len(), 3);
    assert!(manifest.chain_is_consistent());

    // the load and roller sit on box corners; both are held solid
    let lsf = read_level_set(&dir.path().join("stage3.tpls")).unwrap();
    let pads = SolidPads::from_load_case(&config.dims, &config.load_case);
    assert_eq!(pads.elements().len(), 2);
    let geometry = pads.union(|x| lsf.eval(x));
    assert!(geometry(&[0.0, 12.0, 0.0]) > 0.0);
    assert!(geometry(&[24.0, 0.0, 0.0]) > 0.0);
}

#[test]
fn quadtree_depth_barely_matters() {
    let dir = tempfile::tempdir().unwrap();
    let table = run_study(&small_mbb(), Study::Quadtree, dir.path()).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.spread("stage3") < 0.02, "{:?}", table.compliances("stage3"));
    assert!(dir.path().join("study_quadtree.csv").exists());
}
