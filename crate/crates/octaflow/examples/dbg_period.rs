use octaflow::flow::PeriodicOrbit;
use octaflow::fuchsian::{FuchsianGroup, Word};
use octaflow::moebius::{a_t, trace};

fn main() {
    let grp = FuchsianGroup::octagon_shared();
    let word = Word::parse("abcdabADaBAc").unwrap();
    let o = PeriodicOrbit::from_class(&grp, &word).unwrap();
    let t = o.period();
    let cls = grp.evaluate_word(&word);
    println!("tr(class)        = {:.12}", trace(&cls));
    println!("2cosh(T/2)       = {:.12}", 2.0 * (t / 2.0).cosh());
    println!("class tr defect  = {:+.6e}", trace(&cls) - 2.0 * (t / 2.0).cosh());

    let b0 = *o.point_at(0.0).rep();
    let gam0 = grp.identify(&(b0 * a_t(t)), &b0, 1e-2).unwrap();
    let g0 = grp.evaluate_word(&gam0);
    println!("gam0 word        = {}", gam0);
    println!("tr(gam0)         = {:.12}", trace(&g0));
    println!("gam0 tr defect   = {:+.6e}", trace(&g0) - 2.0 * (t / 2.0).cosh());
    println!("det(gam0)        = {:+.6e}", g0.det() - 1.0);
    println!("det(class)       = {:+.6e}", cls.det() - 1.0);
    // entrywise magnitudes of gam0
    let e = g0.entries();
    println!("gam0 entries     = [{:+.6e}, {:+.6e}; {:+.6e}, {:+.6e}]", e[0], e[1], e[2], e[3]);
}
