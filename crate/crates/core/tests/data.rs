use claimfreq::data::{
    clean, split, write_index_file, CleaningRules, Column, Dataset, FeatureSchema, GlmDesign, SplitPolicy, SynthSpec,
};
use claimfreq::glm::{FittedGlm, GlmOptions};
use claimfreq::Error;

const MTPL_SAMPLE: &str = "\
IDpol,ClaimNb,Exposure,Area,VehPower,VehAge,DrivAge,BonusMalus,VehBrand,VehGas,Density,Region
1,1,0.1,'D',5,0,55,50,'B12',Regular,1217,'R82'
3,1,0.77,'D',5,0,55,50,'B12',Regular,1217,'R82'
5,6,0.75,'B',6,2,52,50,'B12',Diesel,54,'R22'
10,1,2.01,'B',7,0,46,50,'B12',Diesel,76,'R72'
11,0,0.84,'B',7,0,46,50,'B3',Diesel,76,'R72'
";

#[test]
fn mtpl_formatted_csv_is_read_and_capped() {
    let d = Dataset::read_csv(MTPL_SAMPLE.as_bytes(), &FeatureSchema::mtpl()).unwrap();
    assert_eq!(d.n_rows(), 5);
    assert_eq!(d.ids.as_ref().unwrap()[2], "5");
    assert_eq!(d.numeric("Area").unwrap(), &[4.0, 4.0, 2.0, 2.0, 2.0]);
    let (brands, levels) = d.categorical("VehBrand").unwrap();
    assert_eq!(levels, &["B12".to_string(), "B3".to_string()]);
    assert_eq!(brands, &[0, 0, 0, 0, 1]);
    assert_eq!(d.numeric("VehGas").unwrap(), &[1.0, 1.0, 0.0, 0.0, 0.0]);

    let (c, report) = clean(&d, &CleaningRules::mtpl_default("ClaimNb", "Exposure")).unwrap();
    assert_eq!((report.rows_before, report.rows_after, report.capped_cells), (5, 5, 2));
    assert_eq!(c.response, vec![1.0, 1.0, 4.0, 1.0, 0.0]);
    assert_eq!(c.exposure, vec![0.1, 0.77, 0.75, 1.0, 0.84]);
    assert!((report.frequency_after - 7.0 / 3.46).abs() < 1e-12);
}

#[test]
fn malformed_rows_are_input_errors() {
    let bad = MTPL_SAMPLE.replace("0.84", "abc");
    let err = Dataset::read_csv(bad.as_bytes(), &FeatureSchema::mtpl()).unwrap_err();
    assert!(!err.is_numerical());
    assert!(err.to_string().contains("Exposure"), "{err}");
    let missing = MTPL_SAMPLE.replace("Density", "Dens");
    assert!(matches!(
        Dataset::read_csv(missing.as_bytes(), &FeatureSchema::mtpl()),
        Err(Error::MissingColumn(_))
    ));
}

#[test]
fn flat_portfolio_recovers_its_rate() {
    let mut spec = SynthSpec::small(50_000);
    for f in &mut spec.features {
        f.effects.clear();
    }
    let d = spec.generate(13).unwrap().dataset;
    let (glm, report) = FittedGlm::fit(&GlmDesign::intercept_only(), &d, &GlmOptions::default()).unwrap();
    let se = report.standard_errors.unwrap()[0];
    assert!((glm.params.intercept - spec.intercept).abs() < 3.0 * se);
    assert!((glm.params.intercept - d.frequency().ln()).abs() < 1e-10);
}

#[test]
fn synthetic_mtpl_has_the_real_layout() {
    let d = SynthSpec::mtpl(2_000).generate(3).unwrap().dataset;
    assert_eq!(d.schema.k(), 9);
    assert!(d.exposure.iter().all(|v| *v > 0.0 && *v <= 1.0));
    assert!(d.response.iter().all(|y| *y >= 0.0 && y.fract() == 0.0));
    assert!(matches!(d.column("Region").unwrap(), Column::Categorical(_)));
    let f = d.frequency();
    assert!(f > 0.02 && f < 0.3, "{f}");
}

#[test]
fn index_file_split_takes_exactly_the_listed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("test.idx");
    write_index_file(&path, "test", &[7, 2, 9]).unwrap();
    let s = split(12, &SplitPolicy::IndexFile { path: path.clone() }).unwrap();
    assert_eq!(s.test, vec![2, 7, 9]);
    assert_eq!(s.train.len(), 9);
    assert!(s.is_partition_of(12));
    assert!(split(8, &SplitPolicy::IndexFile { path }).is_err());
}

#[test]
fn random_split_depends_on_seed_only() {
    let p = |seed| SplitPolicy::Random { test_fraction: 0.1, seed };
    let a = split(678_013, &p(0)).unwrap();
    assert_eq!(a.test.len(), 67_801);
    assert_eq!(a, split(678_013, &p(0)).unwrap());
    assert_ne!(a.test, split(678_013, &p(1)).unwrap().test);
}
