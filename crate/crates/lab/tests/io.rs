use std::fs;

use anagram_core::css::CategoryMap;
use anagram_core::Image;
use anagram_lab::commands::read_logits;
use anagram_lab::config::{load_config, EvalConfig, ModelSource};
use anagram_lab::manifest::{PairManifest, PairRecord};
use anagram_lab::png::{read_png, write_png};
use anagram_lab::LabError;
use serde_json::json;

fn record(id: &str, l1: &str, l2: &str) -> PairRecord {
    PairRecord {
        id: id.into(),
        image1: format!("{id}_1.png"),
        image2: format!("{id}_2.png"),
        label1: l1.into(),
        label2: l2.into(),
        permutation: vec![1, 0, 2, 3],
    }
}

fn manifest(pairs: Vec<PairRecord>) -> PairManifest {
    PairManifest {
        categories: vec!["bear".into(), "cat".into()],
        pairs,
    }
}

#[test]
fn png_roundtrip_is_exact_at_8_bits() {
    let dir = tempfile::tempdir().unwrap();
    let bytes: Vec<u8> = (0..5 * 7 * 3).map(|i| (i * 37 % 256) as u8).collect();
    let image = Image::from_u8(5, 7, 3, &bytes).unwrap();
    let path = dir.path().join("x.png");
    write_png(&path, &image).unwrap();
    let back = read_png(&path).unwrap();
    assert_eq!(back, image);
    assert_eq!(back.quantize(), bytes);
}

#[test]
fn png_errors() {
    let dir = tempfile::tempdir().unwrap();
    let gray = Image::zeros(2, 2, 1);
    assert!(matches!(
        write_png(&dir.path().join("g.png"), &gray),
        Err(LabError::Data(_))
    ));
    let nan = Image::filled(2, 2, 3, f64::NAN);
    assert!(matches!(
        write_png(&dir.path().join("n.png"), &nan),
        Err(LabError::Numeric(_))
    ));
    assert!(matches!(
        read_png(&dir.path().join("absent.png")),
        Err(LabError::Io { .. })
    ));
    fs::write(dir.path().join("junk.png"), b"not a png").unwrap();
    assert!(matches!(read_png(&dir.path().join("junk.png")), Err(LabError::Data(_))));
}

#[test]
fn manifest_validation() {
    assert!(manifest(vec![record("a", "bear", "cat")]).validate(None).is_ok());
    let cases = [
        manifest(vec![record("a", "bear", "bear")]),
        manifest(vec![record("a", "bear", "dog")]),
        manifest(vec![record("a", "bear", "cat"), record("a", "cat", "bear")]),
        manifest(vec![PairRecord {
            permutation: vec![0, 0, 1, 2],
            ..record("a", "bear", "cat")
        }]),
        manifest(vec![PairRecord {
            permutation: vec![1, 0, 2],
            ..record("a", "bear", "cat")
        }]),
        PairManifest {
            categories: vec!["bear".into()],
            pairs: vec![],
        },
    ];
    for m in cases {
        let err = m.validate(None).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
    }
}

#[test]
fn manifest_json_shape_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(vec![record("a", "bear", "cat")]);
    let value = serde_json::to_value(&m).unwrap();
    assert_eq!(
        value,
        json!({"categories": ["bear", "cat"], "pairs": [{"id": "a", "image1": "a_1.png", "image2": "a_2.png", "label1": "bear", "label2": "cat", "permutation": [1, 0, 2, 3]}]})
    );
    let path = dir.path().join("manifest.json");
    fs::write(&path, serde_json::to_vec(&value).unwrap()).unwrap();
    let err = PairManifest::load(&path).unwrap_err();
    assert!(err.to_string().contains("a_1.png"), "{err}");
    for name in ["a_1.png", "a_2.png"] {
        write_png(&dir.path().join(name), &Image::zeros(4, 4, 3)).unwrap();
    }
    let (loaded, base) = PairManifest::load(&path).unwrap();
    assert_eq!(loaded, m);
    assert_eq!(loaded.load_pairs(&base).unwrap()[0].canvas1, Image::zeros(4, 4, 3));
}

#[test]
fn nested_config_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.json");
    let good = json!({"schemaVersion": 1, "manifest": "m.json", "model": {"kind": "logits", "logits": "l.csv"}});
    fs::write(&path, good.to_string()).unwrap();
    let cfg: EvalConfig = load_config(&path).unwrap();
    assert!(matches!(cfg.model, ModelSource::Logits { .. }));
    let bad =
        json!({"schemaVersion": 1, "manifest": "m.json", "model": {"kind": "logits", "logits": "l.csv", "extra": 1}});
    fs::write(&path, bad.to_string()).unwrap();
    assert_eq!(load_config::<EvalConfig>(&path).unwrap_err().exit_code(), 2);
}

#[test]
fn thousand_way_logits_map_to_categories() {
    let dir = tempfile::tempdir().unwrap();
    let m = PairManifest {
        categories: vec!["bear".into(), "wolf".into()],
        pairs: vec![PairRecord {
            label1: "bear".into(),
            label2: "wolf".into(),
            ..record("p", "bear", "wolf")
        }],
    };
    let row = |hot: &[usize]| {
        let mut v = vec![0.0; 1000];
        for &k in hot {
            v[k] = 3.0;
        }
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    };
    let header: Vec<String> = (0..1000).map(|i| format!("c{i}")).collect();
    let text = format!(
        "pairId,view,{}\np,2,{}\np,1,{}\n",
        header.join(","),
        row(&[270, 271]),
        row(&[294])
    );
    let path = dir.path().join("logits.csv");
    fs::write(&path, text).unwrap();
    let map = CategoryMap::imagenet9();
    let (cats, preds) = read_logits(&path, &m, Some(&map)).unwrap();
    assert_eq!(cats, map.categories());
    assert_eq!(cats[preds[0].view1], "bear");
    assert_eq!(cats[preds[0].view2], "wolf");
}
