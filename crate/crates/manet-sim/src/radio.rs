//! Physical layer: two-ray received-power computation, communication and
//! carrier-sense ranges, frame airtime, and the per-node energy ledger.

use std::f64::consts::PI;

/// Which two-ray ground-reflection form to evaluate.
///
/// `PaperTwoRay` keeps the wavelength term: P_t G_t G_r (h_t h_r λ / 4πr²)².
/// `StandardTwoRay` is the textbook form without it: P_t G_t G_r h_t²h_r²/r⁴.
/// Both decay as r⁻⁴; they differ by the constant (λ/4π)².
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationVariant {
    PaperTwoRay,
    StandardTwoRay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    /// RF transmit power feeding the propagation formula, watts. Distinct
    /// from the electrical draw in [`EnergyParams`].
    pub p_t: f64,
    pub g_t: f64,
    pub g_r: f64,
    pub h_t: f64,
    pub h_r: f64,
    pub lambda: f64,
    /// Minimum received power that still decodes, watts.
    pub rx_thresh: f64,
    /// Power at which a transmission still occupies the channel, watts.
    pub cs_thresh: f64,
    pub bitrate: f64,
    pub variant: PropagationVariant,
}

impl Default for RadioParams {
    fn default() -> Self {
        // 2.45 GHz carrier, 1.5 m antennas, thresholds placing the decode
        // range at 250 m and the carrier-sense range at 550 m.
        RadioParams {
            p_t: 0.2818,
            g_t: 1.0,
            g_r: 1.0,
            h_t: 1.5,
            h_r: 1.5,
            lambda: 0.1224,
            rx_thresh: 3.4649e-14,
            cs_thresh: 1.4791e-15,
            bitrate: 2.0e6,
            variant: PropagationVariant::PaperTwoRay,
        }
    }
}

impl RadioParams {
    /// Numerator A of the r⁻⁴ law, so received power is A / r⁴.
    fn path_constant(&self) -> f64 {
        let gains = self.p_t * self.g_t * self.g_r;
        match self.variant {
            PropagationVariant::PaperTwoRay => {
                let k = self.h_t * self.h_r * self.lambda / (4.0 * PI);
                gains * k * k
            }
            PropagationVariant::StandardTwoRay => gains * self.h_t * self.h_t * self.h_r * self.h_r,
        }
    }

    /// Received power at distance `r` meters. `r = 0` is singular and panics.
    pub fn received_power(&self, r: f64) -> f64 {
        assert!(r > 0.0, "received power is singular at r = {r}");
        self.path_constant() / (r * r * r * r)
    }

    /// The unique distance where received power equals `rx_thresh`; decoding
    /// succeeds at or below it.
    pub fn comm_range(&self) -> f64 {
        (self.path_constant() / self.rx_thresh).powf(0.25)
    }

    /// The distance out to which a transmission still registers as channel
    /// occupancy (and can corrupt a reception it overlaps).
    pub fn cs_range(&self) -> f64 {
        (self.path_constant() / self.cs_thresh).powf(0.25)
    }

    /// Seconds a frame of `bits` occupies the channel.
    pub fn airtime(&self, bits: u64) -> f64 {
        bits as f64 / self.bitrate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    /// Electrical draw while transmitting, watts.
    pub p_tx: f64,
    pub p_rx: f64,
    pub p_idle: f64,
    pub initial_energy: f64,
    /// When false (default) idle drain is tracked but kept out of the
    /// consumed-power metric.
    pub count_idle_in_metric: bool,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            p_tx: 0.1819,
            p_rx: 0.0501,
            p_idle: 0.0350,
            initial_energy: 1000.0,
            count_idle_in_metric: false,
        }
    }
}

/// Energy to push `bits` onto the air: (bits/bitrate) · p_tx.
pub fn tx_energy(bits: u64, params: &EnergyParams, bitrate: f64) -> f64 {
    assert!(bits > 0, "zero-bit frame");
    bits as f64 / bitrate * params.p_tx
}

/// Energy to take `bits` off the air: (bits/bitrate) · p_rx.
pub fn rx_energy(bits: u64, params: &EnergyParams, bitrate: f64) -> f64 {
    assert!(bits > 0, "zero-bit frame");
    bits as f64 / bitrate * params.p_rx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyCategory {
    Tx,
    Rx,
    Idle,
}

/// Per-node battery book-keeping. Residual plus the three consumption
/// categories always sums to the initial charge; a node whose residual hits
/// zero is dead and stays dead.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    pub residual: f64,
    pub consumed_tx: f64,
    pub consumed_rx: f64,
    pub consumed_idle: f64,
    pub alive: bool,
    p_idle: f64,
    idle_accrued_until: f64,
}

impl EnergyLedger {
    pub fn new(initial: f64, p_idle: f64) -> EnergyLedger {
        assert!(initial > 0.0, "initial energy must be positive");
        EnergyLedger {
            residual: initial,
            consumed_tx: 0.0,
            consumed_rx: 0.0,
            consumed_idle: 0.0,
            alive: true,
            p_idle,
            idle_accrued_until: 0.0,
        }
    }

    /// Brings the idle baseline up to `now` (seconds), then debits `joules`
    /// in `category`. Returns true when this call killed the node.
    pub fn drain(&mut self, now: f64, joules: f64, category: EnergyCategory) -> bool {
        assert!(joules >= 0.0, "negative drain");
        if !self.alive {
            return false;
        }
        self.accrue_idle(now);
        if !self.alive {
            return true;
        }
        let take = joules.min(self.residual);
        self.residual -= take;
        match category {
            EnergyCategory::Tx => self.consumed_tx += take,
            EnergyCategory::Rx => self.consumed_rx += take,
            EnergyCategory::Idle => self.consumed_idle += take,
        }
        if take >= joules && self.residual > 0.0 {
            false
        } else {
            self.residual = 0.0;
            self.alive = false;
            true
        }
    }

    /// Idle power drains continuously for the whole alive period, as the
    /// baseline under any tx/rx activity.
    pub fn accrue_idle(&mut self, now: f64) {
        if !self.alive || now <= self.idle_accrued_until {
            return;
        }
        let owed = self.p_idle * (now - self.idle_accrued_until);
        self.idle_accrued_until = now;
        let take = owed.min(self.residual);
        self.residual -= take;
        self.consumed_idle += take;
        if take < owed || self.residual <= 0.0 {
            self.residual = 0.0;
            self.alive = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RandomStreams, StreamLabel};
    use proptest::prelude::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn paper_two_ray_matches_hand_evaluation() {
        let params = RadioParams {
            p_t: 1.0,
            g_t: 1.0,
            g_r: 1.0,
            h_t: 1.0,
            h_r: 1.0,
            lambda: 0.125,
            variant: PropagationVariant::PaperTwoRay,
            ..RadioParams::default()
        };
        // (1·1·0.125 / (4π·10²))² evaluated independently and frozen.
        let oracle = 9.894646840072049e-9;
        let got = params.received_power(10.0);
        assert!(rel_err(got, oracle) < 1e-9, "got {got}");
        // Four-significant-digit rounding of the same quantity.
        assert!(rel_err(got, 9.8947e-9) < 1e-4);
    }

    #[test]
    fn standard_two_ray_matches_hand_evaluation() {
        let params = RadioParams {
            p_t: 1.0,
            g_t: 1.0,
            g_r: 1.0,
            h_t: 1.0,
            h_r: 1.0,
            variant: PropagationVariant::StandardTwoRay,
            ..RadioParams::default()
        };
        assert!(rel_err(params.received_power(10.0), 1.0e-4) < 1e-12);
    }

    #[test]
    fn doubling_distance_divides_power_by_sixteen() {
        for variant in [
            PropagationVariant::PaperTwoRay,
            PropagationVariant::StandardTwoRay,
        ] {
            let params = RadioParams {
                variant,
                ..RadioParams::default()
            };
            let near = params.received_power(70.0);
            let far = params.received_power(140.0);
            assert!(rel_err(near / far, 16.0) < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "singular")]
    fn zero_distance_is_rejected() {
        RadioParams::default().received_power(0.0);
    }

    #[test]
    fn comm_range_inverts_received_power() {
        let params = RadioParams::default();
        let r = params.comm_range();
        assert!(rel_err(params.received_power(r), params.rx_thresh) < 1e-9);
        assert!(
            (r - 250.0).abs() < 0.1,
            "default decode range is 250 m, got {r}"
        );
        assert!((params.cs_range() - 550.0).abs() < 0.1);
    }

    #[test]
    fn quadrupled_threshold_shrinks_range_by_root_two() {
        let base = RadioParams::default();
        let tight = RadioParams {
            rx_thresh: 4.0 * base.rx_thresh,
            ..base
        };
        let ratio = tight.comm_range() / base.comm_range();
        assert!(rel_err(ratio, 1.0 / 2.0f64.sqrt()) < 1e-12);
    }

    #[test]
    fn standard_range_at_known_threshold() {
        let params = RadioParams {
            p_t: 1.0,
            g_t: 1.0,
            g_r: 1.0,
            h_t: 1.0,
            h_r: 1.0,
            rx_thresh: 1.0e-8,
            variant: PropagationVariant::StandardTwoRay,
            ..RadioParams::default()
        };
        assert!(rel_err(params.comm_range(), 100.0) < 1e-12);
    }

    #[test]
    fn energy_per_frame_matches_hand_values() {
        let e = EnergyParams::default();
        assert!(rel_err(tx_energy(8000, &e, 2.0e6), 7.276e-4) < 1e-12);
        assert!(rel_err(rx_energy(8000, &e, 2.0e6), 2.004e-4) < 1e-12);
        let ratio = tx_energy(8000, &e, 2.0e6) / rx_energy(8000, &e, 2.0e6);
        assert!(rel_err(ratio, 0.1819 / 0.0501) < 1e-12);
    }

    #[test]
    fn unit_energy_case() {
        let e = EnergyParams {
            p_rx: 1.0,
            ..EnergyParams::default()
        };
        assert_eq!(rx_energy(1, &e, 1.0), 1.0);
    }

    #[test]
    fn energy_scales_linearly_with_bits() {
        let e = EnergyParams::default();
        let one = tx_energy(4096, &e, 2.0e6);
        let two = tx_energy(8192, &e, 2.0e6);
        assert!(rel_err(two, 2.0 * one) < 1e-12);
    }

    #[test]
    #[should_panic(expected = "zero-bit")]
    fn zero_bit_frame_is_rejected() {
        tx_energy(0, &EnergyParams::default(), 2.0e6);
    }

    #[test]
    fn drain_decrements_and_floors() {
        let mut ledger = EnergyLedger::new(1.0, 0.0);
        assert!(!ledger.drain(0.0, 0.3, EnergyCategory::Tx));
        assert!((ledger.residual - 0.7).abs() < 1e-15);
        assert!(ledger.alive);

        let mut ledger = EnergyLedger::new(0.1, 0.0);
        assert!(ledger.drain(0.0, 0.3, EnergyCategory::Rx));
        assert_eq!(ledger.residual, 0.0);
        assert!(!ledger.alive);
        assert!((ledger.consumed_rx - 0.1).abs() < 1e-15);
    }

    #[test]
    fn dead_node_stops_accruing() {
        let mut ledger = EnergyLedger::new(0.5, 1.0);
        ledger.accrue_idle(0.2);
        assert!(ledger.alive);
        ledger.accrue_idle(10.0);
        assert!(!ledger.alive);
        let snapshot = ledger.consumed_idle;
        ledger.accrue_idle(20.0);
        ledger.drain(30.0, 1.0, EnergyCategory::Tx);
        assert_eq!(ledger.consumed_idle, snapshot);
        assert_eq!(ledger.consumed_tx, 0.0);
    }

    #[test]
    fn conservation_holds_under_random_drains() {
        let mut streams = RandomStreams::new(77);
        let mut ledger = EnergyLedger::new(5.0, 0.01);
        let mut t = 0.0;
        for i in 0..10_000 {
            t += streams.draw_uniform(StreamLabel::Traffic, 0.0, 0.05);
            let j = streams.draw_uniform(StreamLabel::Traffic, 0.0, 0.002);
            let cat = if i % 3 == 0 {
                EnergyCategory::Tx
            } else {
                EnergyCategory::Rx
            };
            ledger.drain(t, j, cat);
        }
        let total =
            ledger.residual + ledger.consumed_tx + ledger.consumed_rx + ledger.consumed_idle;
        assert!((total - 5.0).abs() < 1e-9, "conservation drift: {total}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn path_loss_is_monotone_decreasing(
            p_t in 0.01f64..10.0,
            h in 0.5f64..3.0,
            lambda in 0.05f64..0.5,
            r1 in 1.0f64..2000.0,
            delta in 0.1f64..2000.0,
            paper in any::<bool>(),
        ) {
            let params = RadioParams {
                p_t,
                h_t: h,
                h_r: h,
                lambda,
                variant: if paper {
                    PropagationVariant::PaperTwoRay
                } else {
                    PropagationVariant::StandardTwoRay
                },
                ..RadioParams::default()
            };
            prop_assert!(params.received_power(r1) > params.received_power(r1 + delta));
        }

        #[test]
        fn reception_iff_within_comm_range(r in 1.0f64..2000.0) {
            let params = RadioParams::default();
            let decodable = params.received_power(r) >= params.rx_thresh;
            prop_assert_eq!(decodable, r <= params.comm_range());
        }
    }
}
