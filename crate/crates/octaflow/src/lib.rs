pub mod closing;
pub mod flow;
pub mod fuchsian;
pub mod moebius;
pub mod partners;

pub use closing::{
    close_orbit_i, close_orbit_ii, connect_orbits, find_section_meetings, Bound, BoundReport,
    ClosingError, ClosingOptions, ClosingResult, SectionMeeting,
};
pub use flow::{
    detect_encounters, detect_self_crossings, orbit_report, section_coords, Crossing, Encounter,
    EncounterKind, FlowError, OrbitReport, PeriodicOrbit, QuotientPoint, SectionCoords,
    SectionVariant,
};
pub use fuchsian::{FuchsianError, FuchsianGroup, Word};
pub use moebius::{MoebiusElement, MoebiusError};
pub use partners::{
    crossing_partner, crossing_partner_with, orbits_coincide, partner_aas, partner_aas_at,
    partner_aas_with, partner_api, partner_api_at, partner_api_with, partner_ppi, partner_ppi_at,
    partner_ppi_with, partner_single_antiparallel, partner_single_antiparallel_at,
    partner_single_antiparallel_with, verify_partnership, verify_partnership_with,
    CertificateLeg, PartnerError, PartnerOptions, PartnerReport, PartnerResult,
    PartnershipCertificate, Topology,
};
