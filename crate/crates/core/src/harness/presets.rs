//! Bundled experiment presets: desk-scale suites that run out of the box
//! plus the published full-scale configurations for reference.

pub const DESK_NC: &str = include_str!("../../../../presets/desk_nc.toml");
pub const DESK_NIC: &str = include_str!("../../../../presets/desk_nic.toml");
pub const DESK_NC_COMPARE: &str = include_str!("../../../../presets/desk_nc_compare.toml");
pub const DESK_STRATEGIES: &str = include_str!("../../../../presets/desk_strategies.toml");
pub const PAPER_CORE50_NC: &str = include_str!("../../../../presets/paper_core50_nc.toml");
pub const PAPER_CORE50_NIC: &str = include_str!("../../../../presets/paper_core50_nic.toml");
pub const PAPER_IMAGENET_NC: &str = include_str!("../../../../presets/paper_imagenet_nc.toml");

pub fn all() -> &'static [(&'static str, &'static str)] {
    &[
        ("desk-nc", DESK_NC),
        ("desk-nic", DESK_NIC),
        ("desk-nc-compare", DESK_NC_COMPARE),
        ("desk-strategies", DESK_STRATEGIES),
        ("paper-core50-nc", PAPER_CORE50_NC),
        ("paper-core50-nic", PAPER_CORE50_NIC),
        ("paper-imagenet-nc", PAPER_IMAGENET_NC),
    ]
}

pub fn by_name(name: &str) -> Option<&'static str> {
    all().iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
