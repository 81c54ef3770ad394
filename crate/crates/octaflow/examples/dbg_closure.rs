use octaflow::flow::{section_coords, PeriodicOrbit, SectionVariant};
use octaflow::fuchsian::{FuchsianGroup, Word};
use octaflow::moebius::{a_t, b_s, c_u, group_distance, trace};

fn main() {
    let grp = FuchsianGroup::octagon_shared();
    let word = Word::parse("abcdabADaBAc").unwrap();
    let o = PeriodicOrbit::from_class(&grp, &word).unwrap();
    let t = o.period();
    let (t_x0, t_z0) = (2.4600975953028774, 12.467083095236685);
    let owner = o.point_at(t_x0);
    let z = o.point_at(t_z0);
    let c = section_coords(&owner, &z, SectionVariant::P, 0.34).unwrap();
    let g = *owner.rep();
    let t_z = t_z0 - c.residual_time;
    let k = g * (c_u(c.u) * b_s(c.s));
    let t_ret = t - (t_z - t_x0);
    let zeta = grp.identify(&(k * a_t(t_ret)), &g, 1e-3).unwrap();
    let zm = grp.evaluate_word(&zeta);
    let tr_direct = trace(&zm);
    let us = c.u * c.s;
    let tr_formula = (t_ret / 2.0).exp() + (1.0 + us) * (-t_ret / 2.0).exp();
    println!("tr(zeta_B)    = {tr_direct:.12}");
    println!("formula trace = {tr_formula:.12}");
    println!("difference    = {:.6e}", tr_direct - tr_formula);
    println!("2cosh(t/2)    = {:.12}", (t_ret / 2.0).exp() + (-t_ret / 2.0).exp());
    // Which (u', s') would reproduce the direct trace at this t_ret?
    // tr = e^{t/2} + (1+u's')e^{-t/2}  =>  u's' = (tr - 2cosh(t/2)) e^{t/2}
    let usp = (tr_direct - ((t_ret / 2.0).exp() + (-t_ret / 2.0).exp())) * (t_ret / 2.0).exp();
    println!("us implied by direct trace = {usp:.9}   probed us = {us:.9}");
    // And which t' reproduces it with the probed us?
    // Solve e^{t'/2} + (1+us) e^{-t'/2} = tr_direct by Newton from t_ret.
    let mut tp = t_ret;
    for _ in 0..60 {
        let f = (tp / 2.0).exp() + (1.0 + us) * (-tp / 2.0).exp() - tr_direct;
        let fp = 0.5 * (tp / 2.0).exp() - 0.5 * (1.0 + us) * (-tp / 2.0).exp();
        tp -= f / fp;
    }
    println!("t implied by direct trace = {tp:.12}  vs t_ret = {t_ret:.12}  diff = {:.6e}", tp - t_ret);
    // Double-check the probe relation residual once more.
    let m_probe = g * (c_u(c.u) * b_s(c.s) * a_t(c.residual_time));
    let delta = grp.identify(&m_probe, z.rep(), 1e-3).unwrap();
    println!(
        "probe residual = {:.6e}",
        group_distance(&m_probe, &(grp.evaluate_word(&delta) * *z.rep()))
    );
}
