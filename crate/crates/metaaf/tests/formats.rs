use metaaf::checkpoint::{Array, ArrayType, Checkpoint, MAGIC, VERSION};
use metaaf::manifest::{read_manifest, write_manifest};
use metaaf_core::scene::{toy_manifest, ToyPreset, BUILTIN_LABELS};

fn sample() -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.set("kind", "test");
    ck.set("lambda", 0.5);
    ck.arrays.push(Array { name: "w".into(), dtype: ArrayType::F64, shape: vec![2, 3], data: vec![1.0, -2.5, 3.25, 0.1, 1e-300, -0.0] });
    ck.arrays.push(Array { name: "z".into(), dtype: ArrayType::C128, shape: vec![2], data: vec![1.0, 2.0, -3.0, 4.5] });
    ck
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let ck = sample();
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(back.meta, ck.meta);
    for (a, b) in ck.arrays.iter().zip(&back.arrays) {
        assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!((a.dtype, &a.shape), (b.dtype, &b.shape));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    ck.write(&path).unwrap();
    assert_eq!(Checkpoint::read(&path).unwrap(), ck);
}

/// Hand-assembled single-precision file.
#[test]
fn reads_single_precision_tags() {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&0u32.to_le_bytes());
    b.extend_from_slice(&2u32.to_le_bytes());
    let s = |b: &mut Vec<u8>, t: &str| {
        b.extend_from_slice(&(t.len() as u32).to_le_bytes());
        b.extend_from_slice(t.as_bytes());
    };
    s(&mut b, "a");
    s(&mut b, "f32");
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&3u64.to_le_bytes());
    for v in [0.5f32, -1.25, 8.0] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    s(&mut b, "c");
    s(&mut b, "c64");
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&1u64.to_le_bytes());
    for v in [2.0f32, -3.0] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    let ck = Checkpoint::from_bytes(&b).unwrap();
    assert_eq!(ck.arrays[0].data, vec![0.5, -1.25, 8.0]);
    assert_eq!(ck.arrays[1].dtype, ArrayType::C64);
    assert_eq!(ck.arrays[1].data, vec![2.0, -3.0]);
    assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = sample().to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&magic).is_err());
    let mut version = bytes;
    version[8] = 9;
    assert!(Checkpoint::from_bytes(&version).is_err());
}

#[test]
fn manifest_survives_two_write_read_cycles() {
    let labels: Vec<String> = BUILTIN_LABELS[..5].iter().map(|s| s.to_string()).collect();
    let rows = toy_manifest(&ToyPreset { ser_db: (-17.3, 2.9), ..ToyPreset::new(100, 5, 11) }, &labels).unwrap();
    assert_eq!(rows.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_manifest(&a, &rows).unwrap();
    let once = read_manifest(&a).unwrap();
    write_manifest(&b, &once).unwrap();
    let twice = read_manifest(&b).unwrap();
    assert_eq!(once, rows);
    assert_eq!(twice, rows);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn manifest_with_wrong_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    std::fs::write(&p, "id,u,s,class,fold,ser_db,shift,len_s\n").unwrap();
    assert!(read_manifest(&p).is_err());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            metaaf::config::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 7);
}
