use grec_core::catalog::{Catalog, CatalogError, UnknownIdPolicy};
use grec_core::retrieval::VectorIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn manifest(n: usize) -> String {
    let mut s: String = (0..n)
        .map(|i| format!("{{\"id\":\"p{i:03}\",\"image\":\"img/p{i:03}.jpg\",\"labels\":[\"{}\"],\"split\":\"train\"}}\n", ["top", "shoe"][i % 2]))
        .collect();
    s.push_str("{\"__frequencies__\":{\"top\":0.5,\"shoe\":0.5}}\n");
    s
}

#[test]
fn emb1_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut c = Catalog::parse_manifest(&manifest(100)).unwrap();
    let ids: Vec<String> = c.items().iter().map(|i| i.id.clone()).collect();
    for id in &ids {
        let v: Vec<f32> = (0..24).map(|_| rng.gen_range(-1e3f32..1e3) * rng.gen_range(1e-6f32..1.0)).collect();
        c.attach_embedding(id, v).unwrap();
    }
    let path = dir.path().join("emb.bin");
    c.write_embeddings(&path).unwrap();
    let mut back = Catalog::parse_manifest(&manifest(100)).unwrap();
    let report = back.load_embeddings(&path, UnknownIdPolicy::Fail).unwrap();
    assert_eq!(report.attached, 100);
    for id in &ids {
        let a: Vec<u32> = c.embedding(id).unwrap().values().iter().map(|f| f.to_bits()).collect();
        let b: Vec<u32> = back.embedding(id).unwrap().values().iter().map(|f| f.to_bits()).collect();
        assert_eq!(a, b);
    }

    let csv = dir.path().join("emb.csv");
    c.write_embeddings_csv(&csv).unwrap();
    let mut from_csv = Catalog::parse_manifest(&manifest(100)).unwrap();
    from_csv.load_embeddings(&csv, UnknownIdPolicy::Fail).unwrap();
    for id in &ids {
        assert_eq!(c.embedding(id).unwrap(), from_csv.embedding(id).unwrap());
    }

    let index = VectorIndex::build(&c).unwrap();
    let ipath = dir.path().join("index.bin");
    index.save(&ipath).unwrap();
    assert_eq!(VectorIndex::load(&ipath).unwrap(), index);
}

#[test]
fn wrong_dimension_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    std::fs::write(&path, "id,dim=4\np000,1,2,3,4\np001,1,2,3\n").unwrap();
    let mut c = Catalog::parse_manifest(&manifest(2)).unwrap();
    let err = c.load_embeddings(&path, UnknownIdPolicy::Fail).unwrap_err();
    assert!(err.to_string().contains("dimension mismatch"), "{err}");
    assert!(c.embedding("p000").is_err(), "nothing attached after a failed load");
}

#[test]
fn unknown_ids_follow_policy() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    std::fs::write(&path, "id,dim=2\np000,1,2\nghost,3,4\n").unwrap();
    let mut c = Catalog::parse_manifest(&manifest(2)).unwrap();
    assert!(matches!(c.load_embeddings(&path, UnknownIdPolicy::Fail), Err(CatalogError::UnknownId(_))));
    let r = c.load_embeddings(&path, UnknownIdPolicy::Skip).unwrap();
    assert_eq!((r.attached, r.skipped), (1, vec!["ghost".to_string()]));
}
