//! Downstream train: twin capture columns, virus-inactivation loop, CEX,
//! holdup loop and AEX, advanced under the twin-column schedule.

use serde::{Deserialize, Serialize};

use super::column::{
    aex_rhs, elution_rhs, grm_loading_rhs, kinetic_inventory, kinetic_stiffness, loading_inventory,
    loading_len, loading_stiffness, loop_rhs, loop_stiffness, CaptureParams, KineticColumn, LoadingFields,
    LoopParams, ParticleStencil, AexParams, CexParams,
};
use super::schedule::TwinColumnSchedule;
use crate::sim::{integrate_nonnegative, OdeSystem, SimError, SpatialGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub capture: CaptureParams,
    pub cex: CexParams,
    pub aex: AexParams,
    pub vi_loop: LoopParams,
    pub holdup_loop: LoopParams,
    pub capture_axial: usize,
    pub capture_radial: usize,
    pub loop_axial: usize,
    pub polish_axial: usize,
    /// Length of one loading phase (equal to one purification phase), minutes.
    pub load_duration: f64,
    /// Modifier concentration of the elution buffer, M.
    pub elution_modifier: f64,
    pub cex_modifier: f64,
    pub aex_modifier: f64,
    /// Explicit sub-steps use `stability_factor / λ` for the bound `λ` on
    /// the local eigenvalue magnitudes, capped at one minute.
    pub stability_factor: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            capture: CaptureParams::default(),
            cex: CexParams::default(),
            aex: AexParams::default(),
            vi_loop: LoopParams::default(),
            holdup_loop: LoopParams::default(),
            capture_axial: 30,
            capture_radial: 8,
            loop_axial: 40,
            polish_axial: 20,
            load_duration: 1440.0,
            elution_modifier: 0.1,
            cex_modifier: 0.5,
            aex_modifier: 0.5,
            stability_factor: 2.5,
        }
    }
}

impl DownstreamConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.capture.validate()?;
        self.cex.validate()?;
        self.aex.validate()?;
        self.vi_loop.validate()?;
        self.holdup_loop.validate()?;
        if self.capture_axial < 2 || self.capture_radial < 1 || self.loop_axial < 2 || self.polish_axial < 2 {
            return Err(SimError::InvalidArgument("grids need at least two axial cells".into()));
        }
        if !(self.load_duration > 0.0 && self.stability_factor > 0.0 && self.stability_factor <= 2.7) {
            return Err(SimError::InvalidArgument(
                "phase length must be positive and the stability factor in (0, 2.7]".into(),
            ));
        }
        if !(self.elution_modifier > 0.0 && self.cex_modifier > 0.0 && self.aex_modifier > 0.0) {
            return Err(SimError::InvalidArgument("modifier concentrations must be positive".into()));
        }
        Ok(())
    }

    fn capture_grid(&self) -> SpatialGrid {
        let p = &self.capture;
        SpatialGrid { n_axial: self.capture_axial, length: p.length, n_radial: self.capture_radial, volume: p.volume }
    }

    fn loop_grid(&self, lp: &LoopParams) -> SpatialGrid {
        SpatialGrid { n_axial: self.loop_axial, length: lp.length, n_radial: 0, volume: lp.volume }
    }

    fn polish_grid(&self, length: f64, volume: f64) -> SpatialGrid {
        SpatialGrid { n_axial: self.polish_axial, length, n_radial: 0, volume }
    }

    /// Values per capture column in the observation: c, c_p, q1, q2, q, c_s.
    pub fn capture_obs_len(&self) -> usize {
        self.capture_axial * (5 + self.capture_radial)
    }

    /// Length of the downstream part of the observation.
    pub fn obs_len(&self) -> usize {
        2 * self.capture_obs_len() + 2 * self.loop_axial + 6 * self.polish_axial + 2
    }
}

/// Loading-side ODE: loading column plus mass fed and mass lost to waste (mg).
struct LoadSystem<'a> {
    grid: SpatialGrid,
    params: &'a CaptureParams,
    stencil: &'a ParticleStencil,
    v: f64,
    c_feed: f64,
}

impl OdeSystem for LoadSystem<'_> {
    fn dim(&self) -> usize {
        loading_len(self.grid.n_axial, self.grid.n_radial) + 2
    }
    fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        let n = self.dim() - 2;
        grm_loading_rhs(&self.grid, self.params, self.stencil, self.v, self.c_feed, &x[..n], &mut dx[..n]);
        let flow = self.v * self.params.cross_section();
        dx[n] = flow * self.c_feed;
        dx[n + 1] = flow * x[self.grid.n_axial - 1];
        Ok(())
    }
}

/// Offsets of the purification-train state.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TrainLayout {
    nc: usize,
    nl: usize,
    np: usize,
}

impl TrainLayout {
    fn eluting(&self) -> std::ops::Range<usize> {
        0..3 * self.nc
    }
    fn vi(&self) -> std::ops::Range<usize> {
        let s = 3 * self.nc;
        s..s + self.nl
    }
    fn cex(&self) -> std::ops::Range<usize> {
        let s = 3 * self.nc + self.nl;
        s..s + 3 * self.np
    }
    fn holdup(&self) -> std::ops::Range<usize> {
        let s = 3 * self.nc + self.nl + 3 * self.np;
        s..s + self.nl
    }
    fn aex(&self) -> std::ops::Range<usize> {
        let s = 3 * self.nc + 2 * self.nl + 3 * self.np;
        s..s + 3 * self.np
    }
    /// Cumulative product collected from the AEX outlet, mg.
    fn product(&self) -> usize {
        3 * self.nc + 2 * self.nl + 6 * self.np
    }
    fn len(&self) -> usize {
        self.product() + 1
    }
}

struct TrainSystem<'a> {
    cfg: &'a DownstreamConfig,
    layout: TrainLayout,
    elution: KineticColumn,
    cex: KineticColumn,
    aex: KineticColumn,
    /// Superficial velocity through the eluting capture column.
    v: f64,
}

impl OdeSystem for TrainSystem<'_> {
    fn dim(&self) -> usize {
        self.layout.len()
    }
    fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        let cfg = self.cfg;
        let l = self.layout;
        let q = self.v * cfg.capture.cross_section();
        let outlet = |r: std::ops::Range<usize>, n: usize| x[r.start + n - 1];

        let g = cfg.capture_grid();
        elution_rhs(&g, &self.elution, self.v, 0.0, cfg.elution_modifier, &x[l.eluting()], &mut dx[l.eluting()])?;

        let lp = &cfg.vi_loop;
        let v_vi = q / lp.cross_section();
        loop_rhs(
            &cfg.loop_grid(lp),
            &x[l.vi()],
            v_vi,
            lp.d_ax_per_velocity * v_vi,
            outlet(l.eluting(), l.nc),
            &mut dx[l.vi()],
        );

        let v_cex = q / cfg.cex.cross_section();
        elution_rhs(
            &cfg.polish_grid(cfg.cex.length, cfg.cex.volume),
            &self.cex,
            v_cex,
            outlet(l.vi(), l.nl),
            cfg.cex_modifier,
            &x[l.cex()],
            &mut dx[l.cex()],
        )?;

        let hp = &cfg.holdup_loop;
        let v_hold = q / hp.cross_section();
        loop_rhs(
            &cfg.loop_grid(hp),
            &x[l.holdup()],
            v_hold,
            hp.d_ax_per_velocity * v_hold,
            outlet(l.cex(), l.np),
            &mut dx[l.holdup()],
        );

        let v_aex = q / cfg.aex.cross_section();
        aex_rhs(
            &cfg.polish_grid(cfg.aex.length, cfg.aex.volume),
            &self.aex,
            v_aex,
            outlet(l.holdup(), l.nl),
            cfg.aex_modifier,
            &x[l.aex()],
            &mut dx[l.aex()],
        )?;
        dx[l.product()] = q * outlet(l.aex(), l.np);
        Ok(())
    }
}

/// State of the whole downstream train.
#[derive(Debug, Clone, PartialEq)]
pub struct Downstream {
    cfg: DownstreamConfig,
    stencil: ParticleStencil,
    layout: TrainLayout,
    /// Loading column fields followed by mass fed and mass lost (mg).
    load: Vec<f64>,
    /// Eluting column, VI loop, CEX, holdup loop, AEX, collected product.
    train: Vec<f64>,
    schedule: TwinColumnSchedule,
    /// mAb left on eluting columns when they were regenerated, mg.
    discarded: f64,
}

impl Downstream {
    pub fn new(cfg: DownstreamConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let p = &cfg.capture;
        let stencil = ParticleStencil::new(cfg.capture_radial, p.r_p, p.d_eff, p.eps_p);
        let layout = TrainLayout { nc: cfg.capture_axial, nl: cfg.loop_axial, np: cfg.polish_axial };
        let mut d = Self {
            cfg,
            stencil,
            layout,
            load: Vec::new(),
            train: Vec::new(),
            schedule: TwinColumnSchedule::new(cfg.load_duration),
            discarded: 0.0,
        };
        d.reset();
        Ok(d)
    }

    /// Empties every unit, fills modifier fields with their buffers and
    /// starts a loading phase on column 0.
    pub fn reset(&mut self) {
        let cfg = &self.cfg;
        self.load = vec![0.0; loading_len(cfg.capture_axial, cfg.capture_radial) + 2];
        let l = self.layout;
        self.train = vec![0.0; l.len()];
        let nc = l.nc;
        self.train[2 * nc..3 * nc].fill(cfg.elution_modifier);
        let cex = l.cex();
        self.train[cex.start + 2 * l.np..cex.end].fill(cfg.cex_modifier);
        let aex = l.aex();
        self.train[aex.start + 2 * l.np..aex.end].fill(cfg.aex_modifier);
        self.schedule = TwinColumnSchedule::new(cfg.load_duration);
        self.discarded = 0.0;
    }

    pub fn config(&self) -> &DownstreamConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &TwinColumnSchedule {
        &self.schedule
    }

    /// Cumulative harvest fed to the loading columns, mg.
    pub fn mass_fed(&self) -> f64 {
        self.load[self.load.len() - 2]
    }

    /// Cumulative mAb lost in loading flow-through, mg.
    pub fn mass_lost(&self) -> f64 {
        self.load[self.load.len() - 1]
    }

    /// Cumulative mAb removed with regenerated capture columns, mg.
    pub fn mass_discarded(&self) -> f64 {
        self.discarded
    }

    /// Cumulative purified product, mg.
    pub fn product(&self) -> f64 {
        self.train[self.layout.product()]
    }

    /// mAb currently held in all units, mg.
    pub fn inventory(&self) -> f64 {
        let cfg = &self.cfg;
        let l = self.layout;
        let n = self.load.len() - 2;
        let cap_area = cfg.capture.cross_section();
        let mut total = loading_inventory(&cfg.capture_grid(), &cfg.capture, &self.stencil, &self.load[..n]) * cap_area;
        total += kinetic_inventory(&cfg.capture_grid(), &cfg.capture.elution(), &self.train[l.eluting()]) * cap_area;
        for (lp, r) in [(&cfg.vi_loop, l.vi()), (&cfg.holdup_loop, l.holdup())] {
            total += self.train[r].iter().sum::<f64>() * cfg.loop_grid(lp).cell_size() * lp.cross_section();
        }
        let cex_grid = cfg.polish_grid(cfg.cex.length, cfg.cex.volume);
        total += kinetic_inventory(&cex_grid, &cfg.cex.kinetics(), &self.train[l.cex()]) * cfg.cex.cross_section();
        let aex_grid = cfg.polish_grid(cfg.aex.length, cfg.aex.volume);
        total += kinetic_inventory(&aex_grid, &cfg.aex.kinetics(), &self.train[l.aex()]) * cfg.aex.cross_section();
        total
    }

    fn load_step(&self, v: f64) -> f64 {
        let lam = loading_stiffness(&self.cfg.capture_grid(), &self.cfg.capture, &self.stencil, v);
        (self.cfg.stability_factor / lam).min(1.0)
    }

    fn train_step(&self, v: f64) -> f64 {
        let cfg = &self.cfg;
        let l = self.layout;
        let cap = cfg.capture.elution();
        let q = v * cfg.capture.cross_section();
        let x = &self.train;
        let nc = l.nc;
        let q_max = x[nc..2 * nc].iter().cloned().fold(0.0, f64::max);
        let c_max = x[..l.product()].iter().cloned().fold(0.0, f64::max);
        let c_bound = 2.0 * (c_max + (1.0 - cap.eps_c) / cap.eps * q_max) + 1.0;
        let mut lam = kinetic_stiffness(&cfg.capture_grid(), &cap, v, c_bound, cfg.elution_modifier);
        for lp in [&cfg.vi_loop, &cfg.holdup_loop] {
            let vl = q / lp.cross_section();
            lam = lam.max(loop_stiffness(&cfg.loop_grid(lp), vl, lp.d_ax_per_velocity * vl));
        }
        let polish = [
            (cfg.cex.length, cfg.cex.volume, cfg.cex.kinetics(), cfg.cex_modifier),
            (cfg.aex.length, cfg.aex.volume, cfg.aex.kinetics(), cfg.aex_modifier),
        ];
        for (length, volume, col, cs) in polish {
            let vp = q * length / volume;
            lam = lam.max(kinetic_stiffness(&cfg.polish_grid(length, volume), &col, vp, c_bound, cs));
        }
        if lam > 0.0 {
            (cfg.stability_factor / lam).min(1.0)
        } else {
            1.0
        }
    }

    /// Advances the train by `duration` minutes with loading velocity
    /// `v_load`, purification velocity `v_purify` and harvest feed `c_feed`.
    pub fn advance(&mut self, duration: f64, v_load: f64, v_purify: f64, c_feed: f64) -> Result<(), SimError> {
        let mut done = 0.0;
        while duration - done > 0.0 {
            let segment = self.schedule.remaining().min(duration - done);
            if segment > 0.0 {
                self.advance_units(segment, v_load, v_purify, c_feed)?;
            }
            done += segment;
            let swaps = if segment > 0.0 { self.schedule.tick(segment) } else { self.schedule.tick(f64::MIN_POSITIVE) };
            for _ in swaps {
                self.swap_columns();
            }
        }
        Ok(())
    }

    fn advance_units(&mut self, dt: f64, v_load: f64, v_purify: f64, c_feed: f64) -> Result<(), SimError> {
        let cfg = &self.cfg;
        let sys = LoadSystem {
            grid: cfg.capture_grid(),
            params: &cfg.capture,
            stencil: &self.stencil,
            v: v_load,
            c_feed,
        };
        let h = self.load_step(v_load);
        let load = integrate_nonnegative(&sys, 0.0, &self.load, &[], dt, h, None)?;

        let h = self.train_step(v_purify);
        let sys = TrainSystem {
            cfg,
            layout: self.layout,
            elution: cfg.capture.elution(),
            cex: cfg.cex.kinetics(),
            aex: cfg.aex.kinetics(),
            v: v_purify,
        };
        let train = integrate_nonnegative(&sys, 0.0, &self.train, &[], dt, h, None)?;
        self.load = load;
        self.train = train;
        Ok(())
    }

    /// Moves the loaded column to elution and installs a regenerated column
    /// for loading. The material balance of the loaded column is preserved;
    /// adsorbed mAb beyond the elution capacity is released to the mobile phase.
    fn swap_columns(&mut self) {
        let cfg = &self.cfg;
        let p = &cfg.capture;
        let (n, nr) = (cfg.capture_axial, cfg.capture_radial);
        let elu = p.elution();
        let fields = LoadingFields::split(&self.load, n, nr);
        let mut c = vec![0.0; n];
        let mut q = vec![0.0; n];
        for j in 0..n {
            let cp_avg = super::column::particle_average(&self.stencil, &fields.c_p[j * nr..(j + 1) * nr]);
            let mut qe = cp_avg + (fields.q1[j] + fields.q2[j]) / p.eps_p;
            let mut ce = fields.c[j] * p.eps_c / elu.eps;
            if qe > elu.q_max {
                ce += (qe - elu.q_max) * (1.0 - elu.eps_c) / elu.eps;
                qe = elu.q_max;
            }
            c[j] = ce;
            q[j] = qe;
        }
        let elution_grid = cfg.capture_grid();
        self.discarded += kinetic_inventory(&elution_grid, &elu, &self.train[..3 * n]) * p.cross_section();
        let nl = self.load.len();
        let (fed, lost) = (self.load[nl - 2], self.load[nl - 1]);
        self.train[..n].copy_from_slice(&c);
        self.train[n..2 * n].copy_from_slice(&q);
        self.train[2 * n..3 * n].fill(cfg.elution_modifier);
        self.load.fill(0.0);
        self.load[nl - 2] = fed;
        self.load[nl - 1] = lost;
    }

    /// Downstream observation block: both capture columns in fixed layout
    /// (c, c_p, q1, q2, q, c_s; inactive fields zero), VI loop, CEX, holdup
    /// loop, AEX, then the phase fraction and the index of the loading column.
    pub fn observe_into(&self, out: &mut Vec<f64>) {
        let cfg = &self.cfg;
        let l = self.layout;
        let (n, nr) = (cfg.capture_axial, cfg.capture_radial);
        for column in 0..2 {
            let start = out.len();
            out.resize(start + cfg.capture_obs_len(), 0.0);
            let block = &mut out[start..];
            if column == self.schedule.loading {
                let m = loading_len(n, nr);
                block[..m].copy_from_slice(&self.load[..m]);
            } else {
                let m = loading_len(n, nr);
                block[m..m + 2 * n].copy_from_slice(&self.train[n..3 * n]);
                block[..n].copy_from_slice(&self.train[..n]);
            }
        }
        out.extend_from_slice(&self.train[l.vi()]);
        out.extend_from_slice(&self.train[l.cex()]);
        out.extend_from_slice(&self.train[l.holdup()]);
        out.extend_from_slice(&self.train[l.aex()]);
        out.push(self.schedule.clock / self.schedule.load_duration);
        out.push(self.schedule.loading as f64);
    }

    /// Names matching [`Downstream::observe_into`].
    pub fn observation_names(&self) -> Vec<String> {
        let cfg = &self.cfg;
        let (n, nr) = (cfg.capture_axial, cfg.capture_radial);
        let mut names = Vec::with_capacity(cfg.obs_len());
        for column in ["capture_a", "capture_b"] {
            names.extend((0..n).map(|j| format!("{column}.c[{j}]")));
            for j in 0..n {
                names.extend((0..nr).map(|i| format!("{column}.c_p[{j},{i}]")));
            }
            for field in ["q1", "q2", "q", "c_s"] {
                names.extend((0..n).map(|j| format!("{column}.{field}[{j}]")));
            }
        }
        let unit = |names: &mut Vec<String>, unit: &str, fields: &[&str], len: usize| {
            for field in fields {
                names.extend((0..len).map(|j| format!("{unit}.{field}[{j}]")));
            }
        };
        unit(&mut names, "vi_loop", &["c"], cfg.loop_axial);
        unit(&mut names, "cex", &["c", "q", "c_s"], cfg.polish_axial);
        unit(&mut names, "holdup_loop", &["c"], cfg.loop_axial);
        unit(&mut names, "aex", &["c", "q", "c_s"], cfg.polish_axial);
        names.push("phase_fraction".into());
        names.push("loading_column".into());
        names
    }

    /// Per-unit field profiles for inspection: `(unit, field, values)`.
    pub fn profiles(&self) -> Vec<(String, &'static str, Vec<f64>)> {
        let cfg = &self.cfg;
        let l = self.layout;
        let (n, nr) = (cfg.capture_axial, cfg.capture_radial);
        let mut out = Vec::new();
        let loading = format!("capture_{}", ['a', 'b'][self.schedule.loading]);
        let eluting = format!("capture_{}", ['a', 'b'][self.schedule.purifying()]);
        let f = LoadingFields::split(&self.load, n, nr);
        let cp_avg: Vec<f64> = (0..n)
            .map(|j| super::column::particle_average(&self.stencil, &f.c_p[j * nr..(j + 1) * nr]))
            .collect();
        out.push((loading.clone(), "c", f.c.to_vec()));
        out.push((loading.clone(), "c_p_mean", cp_avg));
        out.push((loading.clone(), "q1", f.q1.to_vec()));
        out.push((loading, "q2", f.q2.to_vec()));
        let x = &self.train;
        out.push((eluting.clone(), "c", x[..n].to_vec()));
        out.push((eluting.clone(), "q", x[n..2 * n].to_vec()));
        out.push((eluting, "c_s", x[2 * n..3 * n].to_vec()));
        out.push(("vi_loop".into(), "c", x[l.vi()].to_vec()));
        for (unit, r) in [("cex", l.cex()), ("aex", l.aex())] {
            let s = &x[r];
            let np = l.np;
            out.push((unit.into(), "c", s[..np].to_vec()));
            out.push((unit.into(), "q", s[np..2 * np].to_vec()));
            out.push((unit.into(), "c_s", s[2 * np..].to_vec()));
        }
        out.push(("holdup_loop".into(), "c", x[l.holdup()].to_vec()));
        out
    }

    /// Raw internal state: loading column, train, then schedule.
    pub fn state_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.load);
        out.extend_from_slice(&self.train);
        out.push(self.schedule.loading as f64);
        out.push(self.schedule.clock);
    }

    pub fn all_nonnegative(&self) -> bool {
        self.load.iter().chain(&self.train).all(|v| *v >= 0.0)
    }
}
