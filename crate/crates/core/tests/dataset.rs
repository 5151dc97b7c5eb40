//! Full-size dataset layout: 48 slides × 10 regions, five scanners.

use std::collections::BTreeMap;

use scorpion::analysis::{paired_analysis, unpaired_analysis};
use scorpion::image::save_image;
use scorpion::manifest::{load_manifest, save_manifest, scanner_ids};
use scorpion::metrics::consistency_protocol;
use scorpion::{DatasetManifest, PairedSample, ProbMap, RasterImage, Result};

const SCANNERS: [&str; 5] = ["AT2", "GT450", "DP200", "P1000", "B300"];

fn write_dataset(dir: &std::path::Path) -> DatasetManifest {
    let ids = scanner_ids(&SCANNERS).unwrap();
    let mut samples = Vec::new();
    for slide in 0..48 {
        for region in 0..10 {
            let id = format!("slide{slide:02}_r{region}");
            let shade = (slide * 10 + region) as f64 / 480.0;
            let patches: BTreeMap<_, _> = ids
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let rel = format!("{id}/{s}.png");
                    let img = RasterImage::filled(4, 4, [shade, 0.5, (0.1 * k as f64 + shade * 0.5).min(1.0)]);
                    std::fs::create_dir_all(dir.join(&id)).unwrap();
                    save_image(&img, dir.join(&rel)).unwrap();
                    (s.clone(), rel)
                })
                .collect();
            samples.push(PairedSample { sample_id: id, region_origin: [(region * 1024) as u64, (slide * 1024) as u64], patches, label: None });
        }
    }
    let m = DatasetManifest::new(ids, 1024, 800.0, samples).unwrap();
    save_manifest(&m, dir.join("manifest.json")).unwrap();
    m
}

#[test]
fn full_layout_round_trips_and_analyzes() {
    let dir = tempfile::tempdir().unwrap();
    let written = write_dataset(dir.path());
    let m = load_manifest(dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.samples.len(), 480);
    assert_eq!(m, written);
    m.validate_files().unwrap();

    let stats = unpaired_analysis(&m).unwrap();
    assert_eq!(stats.len(), 2400);
    let reference = m.scanners[0].clone();
    let dev = paired_analysis(&m, &reference).unwrap();
    assert_eq!(dev.len(), 2400);
    assert!(dev.iter().filter(|d| d.scanner == reference).all(|d| d.delta == [0.0; 6]));

    // channel-thresholding predictor: disagreements come only from the blue channel offset
    let predictor = |img: &RasterImage| -> Result<ProbMap> {
        let b = img.get(0, 0)[2];
        let p = if b < 0.25 { [0.9, 0.1] } else { [0.1, 0.9] };
        ProbMap::new(img.width(), img.height(), 2, p.repeat(img.num_pixels()))
    };
    let report = consistency_protocol(&m, &predictor, true).unwrap();
    assert_eq!(report.pairs.len(), 10);
    assert!(report.min <= report.avg && report.avg <= 1.0);
}
