use idf_core::harness::{parse_events_csv, read_periods_csv, summarize, EventIngestOptions};
use idf_core::metrics::SbcThresholds;
use idf_core::models::{fit, sample_paths, FittedParams, ModelSpec, ModelTemplate, SampleConfig};
use idf_core::neural::{load_checkpoint, save_checkpoint};
use idf_core::pointprocess::aggregate_events;
use idf_core::series::{decompose, recompose};
use idf_core::synthgen::{generate, metadata_path, write_generated, GeneratorKind, GeneratorMetadata, GeneratorSpec};

#[test]
fn generated_csv_roundtrips_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("alt.csv");
    let mut spec = GeneratorSpec::new(GeneratorKind::alternating(), 8);
    spec.n_series = 3;
    spec.n_periods = 100;
    let data = generate(&spec).unwrap();
    write_generated(&path, &spec, &data).unwrap();
    let back = read_periods_csv(&path).unwrap();
    assert_eq!(back, data);
    let meta: GeneratorMetadata =
        serde_json::from_str(&std::fs::read_to_string(metadata_path(&path)).unwrap()).unwrap();
    assert_eq!(meta.generator, spec);
    for s in &back {
        assert_eq!(&recompose(&decompose(s)).unwrap().values(), &s.values());
    }
    let summary = summarize(&back, &SbcThresholds::default()).unwrap();
    assert_eq!(summary.mean_size, 10.0);
    assert_eq!(summary.mean_interval, 10.0);
}

#[test]
fn fitted_model_survives_json_and_forecasts_identically() {
    let mut spec = GeneratorSpec::new(GeneratorKind::random(), 2);
    spec.n_series = 10;
    spec.n_periods = 120;
    let data = generate(&spec).unwrap();
    for slug in ["static-nb-nb", "ewma-g-po", "ar-nb-po"] {
        let model = fit(&ModelTemplate::parse(slug).unwrap(), &data).unwrap();
        let back = ModelSpec::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let cfg = SampleConfig::new(5, 64, 3);
        assert_eq!(
            sample_paths(&model, &data[0], &cfg).unwrap(),
            sample_paths(&back, &data[0], &cfg).unwrap()
        );
    }
}

#[test]
fn rnn_weights_checkpoint_through_files() {
    let mut spec = GeneratorSpec::new(GeneratorKind::random(), 4);
    spec.n_series = 4;
    spec.n_periods = 60;
    let data = generate(&spec).unwrap();
    let mut template = ModelTemplate::parse("rnn-g-nb").unwrap();
    if let idf_core::models::Modulation::Rnn(cfg) = &mut template.modulation {
        cfg.train.epochs = 5;
        cfg.hidden_width = 3;
    }
    let model = fit(&template, &data).unwrap();
    let FittedParams::Rnn { params } = &model.params else {
        panic!()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.json");
    save_checkpoint(params, &path).unwrap();
    assert_eq!(&load_checkpoint(&path).unwrap(), params);
}

#[test]
fn events_file_aggregates_to_periods() {
    let text = "item,t,q\na,0.5,2\na,1.5,3\na,1.5,1\nb,0.2,4\n";
    let events = parse_events_csv(text.as_bytes(), &EventIngestOptions::default())
        .unwrap()
        .strict()
        .unwrap();
    let a = aggregate_events(&events[0], 1.0).unwrap();
    assert_eq!(a.values(), &[2, 4]);
    let b = aggregate_events(&events[1], 1.0).unwrap();
    assert_eq!(b.values(), &[4, 0]);
}
