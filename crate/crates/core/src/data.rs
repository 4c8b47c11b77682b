//! Data files compiled into the library.

pub const REGISTRY_CHEST_XR: &str = include_str!("../data/registry_chest_xr.json");
pub const REGISTRY_RDES195: &str = include_str!("../data/registry_rdes195.json");
pub const LEXICONS: &str = include_str!("../data/lexicons.json");
pub const TEMPLATES: &str = include_str!("../data/templates.json");

/// The worked example report used across tests and examples.
pub const NORMAL_REPORT: &str = "FINDINGS: DEVICES: There are no tubes or lines present. CARDIAC: The cardiac silhouette is normal in size and shape. MEDIASTINUM: Mediastinal and hilar contours are within normal limits. LUNGS/PLEURA: The lungs are clear. There is no pleural effusion. There is no pneumothorax. BONES: There are no acute osseous changes. UPPER ABDOMEN: The portions of the upper abdomen included in this study are within normal limits. OTHER: No other significant abnormalities are identified.";
