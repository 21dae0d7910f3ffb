//! Bulk backbone extraction: compute features once, store them on disk, and
//! run the network from the archive instead of the in-process backbone.
//!
//! `cargo run -p mmms --example feature_archive`

use mmms::dataset::{generate_synthetic, OverlapMode, SynthConfig};
use mmms_nn::backbone::save_archive;
use mmms_nn::ops::interpolate_bilinear;
use mmms_nn::{FeatureArchive, FeatureProvider, MmmsNet, NetConfig, StubBackbone, Tensor3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut cfg = SynthConfig::new(9, 2, 2, OverlapMode::Adjacent);
    cfg.height = 48;
    cfg.width = 48;
    let samples = generate_synthetic(&cfg)?;

    let net_cfg = NetConfig::tiny(vec![1]);
    let (h, w) = net_cfg.image_size;
    let backbone = StubBackbone::new(net_cfg.stub_backbone(), 4)?;
    for s in &samples {
        let rgb = interpolate_bilinear(&s.rgb, h, w)?;
        let path = save_archive(dir.path(), &s.id, &backbone.features(&s.id, &rgb)?)?;
        println!("saved {}", path.display());
    }

    let live = MmmsNet::with_stub_backbone(net_cfg.clone(), 4)?;
    let archived = MmmsNet::new(net_cfg, 4, Box::new(FeatureArchive::new(dir.path())))?;
    let interaction = Tensor3::zeros(h, w, 3);
    for s in &samples {
        let rgb = interpolate_bilinear(&s.rgb, h, w)?;
        let depth = interpolate_bilinear(s.modality("depth").ok_or("no depth")?, h, w)?;
        let a = live.predict(&live.prepare(&s.id, &rgb, std::slice::from_ref(&depth))?, &interaction)?;
        let b = archived.predict(&archived.prepare(&s.id, &rgb, &[depth])?, &interaction)?;
        println!("{}: archive and live outputs identical: {}", s.id, a == b);
    }
    Ok(())
}
