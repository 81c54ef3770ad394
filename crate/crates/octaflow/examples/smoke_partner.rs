use octaflow::flow::{detect_encounters, EncounterKind, PeriodicOrbit};
use octaflow::fuchsian::{FuchsianGroup, Word};
use octaflow::partners::{
    partner_aas, partner_api, partner_ppi, partner_single_antiparallel, verify_partnership,
    PartnerResult,
};

fn show(tag: &str, res: Result<PartnerResult, octaflow::partners::PartnerError>) {
    match res {
        Ok(res) => {
            println!("--- {tag}: OK");
            println!("{}", serde_json::to_string_pretty(&res.report()).unwrap());
            let cert = verify_partnership(&res.original, &res.partner, 40.0 * res.eps);
            println!(
                "independent verification: {:?}",
                cert.map(|c| (c.legs.len(), c.max_distance()))
            );
        }
        Err(err) => println!("--- {tag}: ERR {err}"),
    }
}

fn main() {
    let grp = FuchsianGroup::octagon_shared();
    let word = Word::parse(&std::env::args().nth(1).unwrap_or_else(|| "abcBAd".into())).unwrap();
    let eps: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.34);
    let orbit = PeriodicOrbit::from_class(&grp, &word).unwrap();
    println!("orbit class {} period {:.6}", orbit.class(), orbit.period());
    let encs = detect_encounters(&orbit, eps, None).unwrap();
    println!("{} encounters at eps {eps}", encs.len());
    for e in &encs {
        println!(
            "  kind {:?} radius {:.4} stretch {:.3} entries {:?}",
            e.kind,
            e.radius,
            e.stretch,
            e.entries.iter().map(|(t, c)| (t, c.u, c.s)).collect::<Vec<_>>()
        );
    }
    for (i, e) in encs.iter().enumerate() {
        if e.kind == EncounterKind::Antiparallel {
            show(&format!("single anti #{i}"), partner_single_antiparallel(&orbit, e));
        }
        for (j, f) in encs.iter().enumerate().skip(i + 1) {
            let tag = format!("pair #{i}/#{j}");
            match (e.kind, f.kind) {
                (EncounterKind::Antiparallel, EncounterKind::Antiparallel) => {
                    show(&format!("{tag} aas"), partner_aas(&orbit, e, f))
                }
                (EncounterKind::Parallel, EncounterKind::Parallel) => {
                    show(&format!("{tag} ppi"), partner_ppi(&orbit, e, f))
                }
                _ => show(&format!("{tag} api"), partner_api(&orbit, e, f)),
            }
        }
    }
}
