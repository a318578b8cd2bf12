use gala_core::domainsim::{gen_glyph_domain, GlyphStyle, TransformSpec};
use gala_core::experiment::{cached_domain, DomainSpec, GeneratorSpec};
use gala_core::federation::{run_protocol, Protocol, ProtocolConfig};

#[test]
fn glyph_model_learns_its_own_domain() {
    let d = gen_glyph_domain("g", 4, 100, 12, 1, GlyphStyle::default(), 3).unwrap();
    let cfg = ProtocolConfig {
        protocol: Protocol::Oracle,
        rounds: 40,
        ..Default::default()
    };
    let acc = run_protocol(&cfg, &[], &d).unwrap().final_accuracy();
    assert!(acc > 0.9, "self accuracy {acc}");
}

#[test]
fn cache_hit_returns_generated_domain() {
    let spec = DomainSpec {
        name: "c".into(),
        generator: GeneratorSpec::Glyph {
            classes: 4,
            per_class: 10,
            canvas: 12,
            channels: 1,
            seed: 5,
        },
        transforms: vec![
            TransformSpec::ScaleRecenter { inner: 8 },
            TransformSpec::ChannelStack { shift_px: 1 },
        ],
    };
    let dir = tempfile::tempdir().unwrap();
    let fresh = cached_domain(&spec, dir.path()).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let again = cached_domain(&spec, dir.path()).unwrap();
    assert_eq!(fresh, again);
    assert_eq!(fresh.feature_dim(), 3 * 144);
    let direct = spec.generate().unwrap();
    assert_eq!(fresh.features(), direct.features());
    assert_eq!(fresh.labels(), direct.labels());
}
