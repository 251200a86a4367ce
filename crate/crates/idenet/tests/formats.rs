use idenet::checkpoint::{self, Checkpoint};
use idenet::dataset::{read_dataset, read_network, write_dataset, write_network, Meta};
use idenet::reason::{answer, ModelFile, QueryFile, QueryKind, Verdict};
use idenet::Error;
use idenet_core::datagen::{semi_synthetic, synthetic_ba, GenConfig, Mechanism};
use idenet_core::error::ReasonError;
use idenet_core::estimator::{predict, train_variant, GraphInputs, TrainConfig, Variant};
use idenet_core::netgen::NetworkSpec;
use idenet_core::numeric::{Matrix, SparseAdjacency};
use tempfile::TempDir;

#[test]
fn synthetic_dataset_round_trips() {
    let dir = TempDir::new().unwrap();
    let data = synthetic_ba(300, 4, &GenConfig { tau_p: 7.5, ..GenConfig::default() }, 12).unwrap();
    let spec = NetworkSpec::BarabasiAlbert { n: 300, m: 4 };
    write_dataset(dir.path(), &data, &Meta::describe(&data.network, Some(&spec))).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.network, data.network);
    assert_eq!(back.x, data.x);
    assert_eq!(back.y, data.y);
    assert_eq!(back.y0, data.y0);
    assert_eq!(back.y1, data.y1);
    assert_eq!(back.tau_true, data.tau_true);
    assert_eq!(back.exposure_true, data.exposure_true);
    assert_eq!(back.config, data.config);
}

#[test]
fn semi_synthetic_dataset_round_trips() {
    let dir = TempDir::new().unwrap();
    let n = 80;
    let features = Matrix::from_vec(n, 4, (0..n * 4).map(|k| ((k * 37) % 11) as f64 / 3.0).collect());
    let edges: Vec<(u32, u32)> = (1..n as u32).map(|i| (i / 3, i)).collect();
    let adj = SparseAdjacency::from_edges(n, &edges).unwrap();
    let cfg = GenConfig { mechanism: Mechanism::PeerDegree, ..GenConfig::default() };
    let (data, _) = semi_synthetic(&features, adj, &cfg, 5).unwrap();
    write_dataset(dir.path(), &data, &Meta::describe(&data.network, None)).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.network, data.network);
    assert_eq!(back.y, data.y);
}

#[test]
fn tampered_network_files_are_rejected() {
    let dir = TempDir::new().unwrap();
    let data = synthetic_ba(30, 2, &GenConfig::default(), 1).unwrap();
    let meta = Meta::describe(&data.network, None);
    write_network(dir.path(), &data.network, &meta).unwrap();
    assert!(read_network(dir.path()).is_ok());

    let edges = dir.path().join("edges.csv");
    let text = std::fs::read_to_string(&edges).unwrap();
    std::fs::write(&edges, text.replacen("Z_r", "weight", 1)).unwrap();
    assert!(matches!(read_network(dir.path()), Err(Error::Parse { .. })));

    std::fs::write(&edges, text.replacen("\n0,", "\n0.5,", 1)).unwrap();
    let err = read_network(dir.path()).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn checkpoints_reproduce_predictions() {
    let dir = TempDir::new().unwrap();
    let data = synthetic_ba(150, 3, &GenConfig { tau_p: 5.0, ..GenConfig::default() }, 4).unwrap();
    let inputs = GraphInputs::from_network(&data.network).unwrap();
    let cfg = TrainConfig { maxiter: 20, fdim: 8, ..TrainConfig::default() };
    for variant in [Variant::Full, Variant::Homogeneous, Variant::NoInterference] {
        let model = train_variant(variant, &inputs, &data.x, &data.y, &cfg).unwrap();
        let ck = Checkpoint::from_model(&model, inputs.node_dim(), inputs.edge_dim());
        checkpoint::save(dir.path(), &ck, &cfg).unwrap();
        let (back, net) = checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(predict(&net, &inputs, &data.x).unwrap(), model.predict(&inputs, &data.x).unwrap());
    }
}

#[test]
fn checkpoint_with_wrong_widths_is_rejected() {
    let data = synthetic_ba(60, 2, &GenConfig::default(), 4).unwrap();
    let inputs = GraphInputs::from_network(&data.network).unwrap();
    let cfg = TrainConfig { maxiter: 2, fdim: 8, ..TrainConfig::default() };
    let model = train_variant(Variant::Full, &inputs, &data.x, &data.y, &cfg).unwrap();
    let ck = Checkpoint::from_model(&model, inputs.node_dim(), inputs.edge_dim());
    let wider = TrainConfig { fdim: 16, ..cfg.clone() };
    assert!(ck.to_network(&wider).is_err());
    let mut torn = ck.clone();
    torn.tensors[0].data.pop();
    assert!(torn.to_network(&cfg).is_err());
}

fn model_file() -> ModelFile {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/social_model.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn model_files_reject_unknown_keys_and_classes() {
    let mut v: serde_json::Value = serde_json::to_value(model_file()).unwrap();
    v["roles"] = serde_json::json!({});
    assert!(serde_json::from_value::<ModelFile>(v).is_err());
    let mut m = model_file();
    m.attributes[0].class = String::from("Group");
    assert!(m.to_model().is_err());
    let mut m = model_file();
    m.dependencies.push(String::from("[U].St -> [U].Dem"));
    assert!(m.to_model().is_err());
}

#[test]
fn queries_check_their_variables() {
    let model = model_file().to_model().unwrap();
    let q = |kind, x: &[&str], y: &[&str], z: &[&str]| QueryFile {
        query: kind,
        x: x.iter().map(|s| s.to_string()).collect(),
        y: y.iter().map(|s| s.to_string()).collect(),
        z: z.iter().map(|s| s.to_string()).collect(),
    };
    let err = answer(&model, &q(QueryKind::Adjust, &["[U].Aff"], &["[U].St"], &["[U,F,U].St"])).unwrap_err();
    assert!(matches!(err, Error::Reason(ReasonError::PeerOutcomeConditioned(_))), "{err}");
    let err = answer(&model, &q(QueryKind::Dsep, &["[U].Aff"], &["[U].St"], &["[U].StL"])).unwrap_err();
    assert!(matches!(err, Error::Reason(ReasonError::LatentInConditioningSet(_))), "{err}");
    assert!(answer(&model, &q(QueryKind::Dsep, &["[U].Nope"], &["[U].St"], &[])).is_err());
    assert!(answer(&model, &q(QueryKind::Adjust, &["[U].Aff", "[U].Dem"], &["[U].St"], &[])).is_err());

    let user_set = ["[U].Dem", "[U,F].Ex", "[U,F,U,F].Ex", "[U,F,U].Aff", "[U,F].Dur"];
    let v = answer(&model, &q(QueryKind::Adjust, &["[U].Aff"], &["[U].St"], &user_set)).unwrap();
    assert!(v.affirmative());
    let v = answer(&model, &q(QueryKind::Dsep, &["[U].Aff"], &["[U].St"], &["[U,F].Ex", "[U,F,U,F].Ex"])).unwrap();
    let Verdict::Dsep { separated, witness } = v else { panic!("dsep verdict") };
    assert!(!separated);
    assert_eq!(witness, ["[U].Aff", "[U].St"]);
}
