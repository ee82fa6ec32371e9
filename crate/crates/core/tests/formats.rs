use ndarray::Array2;
use proptest::prelude::*;
use ttjac_core::fit::{AlsConfig, Standardization};
use ttjac_core::grid::Grid1D;
use ttjac_core::jac::{Activation, FeatureMapSpec, GeneratorSpec, Scorer};
use ttjac_core::model::{fit_score_model, Provenance, ScoreModel};
use ttjac_core::samples::SampleSet;
use ttjac_core::tt::{IndexBatch, TTTensor};
use ttjac_core::{Error, ErrorKind};

fn scorer(d: usize) -> Scorer {
    Scorer::new(
        GeneratorSpec::random_mlp(d, &[6], d + 1, Activation::Tanh, 2).unwrap(),
        FeatureMapSpec::Identity,
    )
    .unwrap()
    .with_tag("mlp")
}

fn model(d: usize) -> ScoreModel {
    let s = scorer(d)
        .build_sample_set(&Grid1D::equal_mass(8, 1e-4).unwrap(), 2000, 3)
        .unwrap();
    let cfg = AlsConfig {
        rank: 3,
        sweeps: 3,
        ..AlsConfig::default()
    };
    fit_score_model(&s, Some(&cfg), 77).unwrap().model
}

#[test]
fn sample_files_round_trip_byte_identically() {
    let s = scorer(3)
        .build_sample_set(&Grid1D::equal_mass(16, 1e-3).unwrap(), 300, 5)
        .unwrap();
    let bytes = s.to_bytes();
    let back = SampleSet::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.tag(), "mlp");
    assert_eq!(back.grid(), s.grid());
    assert_eq!(back.indices(), s.indices());
}

#[test]
fn model_files_round_trip_byte_identically() {
    let m = model(3);
    let bytes = m.to_bytes();
    let back = ScoreModel::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.provenance().config_hash, 77);
    assert_eq!(back.provenance().sample_count, 2000);
}

fn check_corruption(bytes: &[u8], read: impl Fn(&[u8]) -> ttjac_core::Result<()>) {
    let mut bad = bytes.to_vec();
    bad[0] ^= 0xff;
    assert!(matches!(read(&bad), Err(Error::Format(_))));
    assert_eq!(read(&bad).unwrap_err().kind(), ErrorKind::Data);
    assert!(matches!(
        read(&bytes[..bytes.len() - 3]),
        Err(Error::Format(_))
    ));
    assert!(matches!(read(&bytes[..5]), Err(Error::Format(_))));
    assert!(read(bytes).is_ok());
}

#[test]
fn corrupt_magic_and_truncation_are_format_errors() {
    let grid = Grid1D::equal_mass(8, 1e-4).unwrap();
    check_corruption(&model(2).to_bytes(), |b| {
        ScoreModel::from_bytes(b).map(|_| ())
    });
    check_corruption(
        &scorer(2).build_sample_set(&grid, 20, 1).unwrap().to_bytes(),
        |b| SampleSet::from_bytes(b).map(|_| ()),
    );
    check_corruption(
        &TTTensor::random(&[3; 3], &[1, 2, 2, 1], 0)
            .unwrap()
            .to_bytes(),
        |b| TTTensor::from_bytes(b).map(|_| ()),
    );
}

#[test]
fn custom_grids_are_not_written_to_sample_files() {
    let grid = Grid1D::from_parts(1e-4, vec![-3.0, -1.0, 1.0, 3.0], vec![-2.0, 0.0, 2.0]).unwrap();
    let s = SampleSet::new(Array2::zeros((2, 2)), vec![0.0, 1.0], grid, "").unwrap();
    assert!(matches!(s.write_to(Vec::new()), Err(Error::Format(_))));
}

#[test]
fn center_latents_evaluate_to_tensor_entries() {
    let m = model(3);
    let grid = m.grid().clone();
    let idx = Array2::from_shape_vec((4, 3), vec![0, 1, 2, 7, 7, 7, 3, 0, 5, 4, 4, 4]).unwrap();
    let latents = idx.mapv(|i| grid.centers()[i]);
    let got = m.eval_latents(&latents).unwrap();
    let st = m.standardization();
    let raw = m
        .tensor()
        .eval_batch(&IndexBatch::new(idx.clone()))
        .unwrap();
    for (row, (g, r)) in got.iter().zip(raw).enumerate() {
        assert_eq!(*g, st.inverse(r));
        let single = m
            .tensor()
            .eval(&ttjac_core::GridIndex(idx.row(row).to_vec()))
            .unwrap();
        assert_eq!(*g, st.inverse(single));
    }
    assert!(m.eval_latents(&Array2::zeros((0, 3))).unwrap().is_empty());
    assert!(matches!(
        m.eval_latents(&Array2::zeros((2, 4))),
        Err(Error::Shape(_))
    ));
}

#[test]
fn sample_csv_has_latents_indices_and_values() {
    let s = scorer(2)
        .build_sample_set(&Grid1D::equal_mass(8, 1e-4).unwrap(), 5, 1)
        .unwrap();
    let mut out = Vec::new();
    s.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "z0,z1,i0,i1,value");
    assert_eq!(lines.len(), 6);
    let fields: Vec<f64> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields[0], s.latents()[[0, 0]]);
    assert_eq!(fields[2] as usize, s.indices()[[0, 0]]);
    assert_eq!(fields[4], s.values()[0]);
}

#[test]
fn standardization_round_trips_values() {
    let st = Standardization::from_values(&[1.0, 2.0, 4.0, 9.0]).unwrap();
    for v in [-3.0, 0.0, 2.5, 100.0] {
        assert!((st.inverse(st.forward(v)) - v).abs() < 1e-12);
    }
    assert_eq!(Standardization::from_values(&[5.0; 3]).unwrap().std, 1.0);
}

#[test]
fn model_rejects_mismatched_tensor() {
    let grid = Grid1D::equal_mass(4, 1e-4).unwrap();
    let t = TTTensor::random(&[5; 3], &[1, 2, 2, 1], 0).unwrap();
    let prov = Provenance {
        generator_tag: String::new(),
        sample_count: 0,
        config_hash: 0,
    };
    assert!(ScoreModel::new(grid, t, Standardization::identity(), prov).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_sample_sets_round_trip(d in 1usize..5, n in 2usize..40, m in 1usize..50, seed in any::<u64>()) {
        let s = Scorer::new(GeneratorSpec::random_affine(d, d + 1, seed), FeatureMapSpec::Identity)
            .unwrap()
            .build_sample_set(&Grid1D::equal_mass(n, 1e-4).unwrap(), m, seed);
        // random affine maps can be degenerate; only well-posed draws are stored
        if let Ok(s) = s {
            let bytes = s.to_bytes();
            prop_assert_eq!(SampleSet::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        }
    }
}
