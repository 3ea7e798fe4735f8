//! Versioned JSON run reports: single-inference records and expert-sweep
//! benchmark tables, with per-direction byte counts, modeled LAN/WAN times,
//! modeled setup traffic, and the response-ciphertext what-if column.
//!
//! Traffic fields come from the client's counters; wall-clock fields are the
//! only nondeterministic entries. The schema is versioned so downstream
//! consumers can fail loudly on drift.

use serde::Serialize;

use crate::dealer::Budget;
use crate::model::{ForwardTrace, LayerTrace, ModelConfig, MoeProtocol};
use crate::sharing::OpCounters;
use crate::transport::{ChannelStats, NetProfile};

pub const SCHEMA_VERSION: u32 = 1;

/// Total online bytes if every response ciphertext were `scale` times its
/// modeled size (compression what-if); wire traffic is never actually scaled.
pub fn whatif_response_bytes(total_bytes: u64, resp_ct_bytes: u64, scale: f64) -> u64 {
    debug_assert!(resp_ct_bytes <= total_bytes);
    total_bytes - resp_ct_bytes + (resp_ct_bytes as f64 * scale).round() as u64
}

/// Sum of the MoE selection and compute phases over all layers, in
/// payload-plus-framing bytes: the quantity whose flatness is under test.
pub fn moe_phase_bytes(trace: &ForwardTrace) -> (u64, u64) {
    let sel = trace.layers.iter().map(|l| l.moe.selection.total_bytes()).sum();
    let cmp = trace.layers.iter().map(|l| l.moe.compute.total_bytes()).sum();
    (sel, cmp)
}

/// One layer of the per-layer breakdown.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LayerReport {
    pub attention: ChannelStats,
    pub gate: ChannelStats,
    pub moe_selection: ChannelStats,
    pub moe_compute: ChannelStats,
}

impl From<&LayerTrace> for LayerReport {
    fn from(lt: &LayerTrace) -> LayerReport {
        LayerReport {
            attention: lt.attention,
            gate: lt.gate,
            moe_selection: lt.moe.selection,
            moe_compute: lt.moe.compute,
        }
    }
}

/// Everything a single secure forward run reports.
#[derive(Debug, Clone, Serialize)]
pub struct InferReport {
    pub schema_version: u32,
    pub protocol: MoeProtocol,
    pub gate_scaling: bool,
    pub model: ModelConfig,
    pub seed: u64,
    pub transport: String,
    /// Per-direction payload/framing/message counters and rounds.
    pub online: ChannelStats,
    /// Payload plus framing, both directions.
    pub online_bytes_total: u64,
    /// Dealer traffic under the share-delivery size model; never transmitted.
    pub setup_bytes_modeled: u64,
    pub rounds: u64,
    pub wall_time_s: f64,
    /// Time under the profile chosen at the command line, if any.
    pub net: Option<String>,
    pub modeled_time_s: Option<f64>,
    pub modeled_lan_time_s: f64,
    pub modeled_wan_time_s: f64,
    pub response_scale: f64,
    /// Online total with response ciphertexts scaled by `response_scale`.
    pub online_bytes_whatif_response: u64,
    pub counters: OpCounters,
    pub layers: Vec<LayerReport>,
}

/// Client-side measurements of one finished run, ready for reporting.
#[derive(Debug, Clone)]
pub struct RunMeasurements {
    pub trace: ForwardTrace,
    pub session: ChannelStats,
    pub budget: Budget,
    pub wall_time_s: f64,
}

impl InferReport {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        model: ModelConfig,
        protocol: MoeProtocol,
        gate_scaling: bool,
        seed: u64,
        transport: &str,
        net: Option<NetProfile>,
        ell: u32,
        response_scale: f64,
        m: &RunMeasurements,
    ) -> InferReport {
        let total = m.session.total_bytes();
        InferReport {
            schema_version: SCHEMA_VERSION,
            protocol,
            gate_scaling,
            model,
            seed,
            transport: transport.to_string(),
            online: m.session,
            online_bytes_total: total,
            setup_bytes_modeled: m.budget.modeled_setup_bytes(ell),
            rounds: m.session.rounds,
            wall_time_s: m.wall_time_s,
            net: net.map(|p| p.name.to_string()),
            modeled_time_s: net.map(|p| p.modeled_time_s(&m.session)),
            modeled_lan_time_s: NetProfile::LAN.modeled_time_s(&m.session),
            modeled_wan_time_s: NetProfile::WAN.modeled_time_s(&m.session),
            response_scale,
            online_bytes_whatif_response: whatif_response_bytes(
                total,
                m.trace.counters.resp_ct_bytes,
                response_scale,
            ),
            counters: m.trace.counters,
            layers: m.trace.layers.iter().map(LayerReport::from).collect(),
        }
    }
}

/// One row of the expert sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BenchRow {
    pub n_experts: usize,
    pub protocol: MoeProtocol,
    /// Whole-run payload plus framing, both directions.
    pub online_bytes: u64,
    pub online_payload_c_to_s: u64,
    pub online_payload_s_to_c: u64,
    /// MoE phases only, summed over layers.
    pub moe_selection_bytes: u64,
    pub moe_compute_bytes: u64,
    pub moe_bytes: u64,
    pub setup_bytes_modeled: u64,
    pub rounds: u64,
    pub wall_time_s: f64,
    pub modeled_lan_time_s: f64,
    pub modeled_wan_time_s: f64,
    pub whatif_response_bytes: u64,
}

impl BenchRow {
    pub fn build(
        n_experts: usize,
        protocol: MoeProtocol,
        ell: u32,
        response_scale: f64,
        m: &RunMeasurements,
    ) -> BenchRow {
        let (sel, cmp) = moe_phase_bytes(&m.trace);
        BenchRow {
            n_experts,
            protocol,
            online_bytes: m.session.total_bytes(),
            online_payload_c_to_s: m.session.payload_c_to_s,
            online_payload_s_to_c: m.session.payload_s_to_c,
            moe_selection_bytes: sel,
            moe_compute_bytes: cmp,
            moe_bytes: sel + cmp,
            setup_bytes_modeled: m.budget.modeled_setup_bytes(ell),
            rounds: m.session.rounds,
            wall_time_s: m.wall_time_s,
            modeled_lan_time_s: NetProfile::LAN.modeled_time_s(&m.session),
            modeled_wan_time_s: NetProfile::WAN.modeled_time_s(&m.session),
            whatif_response_bytes: whatif_response_bytes(
                m.session.total_bytes(),
                m.trace.counters.resp_ct_bytes,
                response_scale,
            ),
        }
    }
}

/// Communication ratio between the largest and smallest expert count of one
/// protocol, on MoE-phase bytes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlatnessEntry {
    pub protocol: MoeProtocol,
    pub min_experts: usize,
    pub max_experts: usize,
    pub moe_bytes_at_min: u64,
    pub moe_bytes_at_max: u64,
    pub ratio: f64,
}

/// Per-protocol flatness ratios of a finished sweep.
pub fn flatness(rows: &[BenchRow]) -> Vec<FlatnessEntry> {
    let mut out = Vec::new();
    for protocol in [MoeProtocol::Sparse, MoeProtocol::Dense] {
        let mut of_protocol: Vec<&BenchRow> =
            rows.iter().filter(|r| r.protocol == protocol).collect();
        if of_protocol.len() < 2 {
            continue;
        }
        of_protocol.sort_by_key(|r| r.n_experts);
        let lo = of_protocol.first().unwrap();
        let hi = of_protocol.last().unwrap();
        out.push(FlatnessEntry {
            protocol,
            min_experts: lo.n_experts,
            max_experts: hi.n_experts,
            moe_bytes_at_min: lo.moe_bytes,
            moe_bytes_at_max: hi.moe_bytes,
            ratio: hi.moe_bytes as f64 / lo.moe_bytes as f64,
        });
    }
    out
}

/// The whole benchmark report.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub d_model: usize,
    pub d_ff: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub seq_len: usize,
    pub gate_scaling: bool,
    pub seed: u64,
    pub response_scale: f64,
    pub rows: Vec<BenchRow>,
    pub flatness: Vec<FlatnessEntry>,
}

impl BenchReport {
    pub fn build(
        base: ModelConfig,
        gate_scaling: bool,
        seed: u64,
        response_scale: f64,
        rows: Vec<BenchRow>,
    ) -> BenchReport {
        let flatness = flatness(&rows);
        BenchReport {
            schema_version: SCHEMA_VERSION,
            d_model: base.d_model,
            d_ff: base.d_ff,
            num_heads: base.num_heads,
            num_layers: base.num_layers,
            seq_len: base.seq_len,
            gate_scaling,
            seed,
            response_scale,
            rows,
            flatness,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::{FixedConfig, FixedTensor};
    use crate::model::{estimate_forward, gen_weights, run_forward};
    use crate::protocols::HeOpts;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    const CFG: FixedConfig = FixedConfig::DEFAULT;

    fn measured_run(protocol: MoeProtocol) -> (ModelConfig, RunMeasurements) {
        let config = ModelConfig {
            d_model: 8,
            d_ff: 8,
            num_heads: 2,
            num_layers: 1,
            n_experts: 2,
            k_experts: 1,
            seq_len: 2,
        };
        let store = gen_weights(config, CFG, 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..16)
            .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
            .collect();
        let tokens = FixedTensor::encode(CFG, 2, 8, &vals);
        let t0 = std::time::Instant::now();
        let (_, trace, session) =
            run_forward(&store, &tokens, HeOpts::DEFAULT, 7, protocol, false).unwrap();
        let (budget, _) = estimate_forward(&store, HeOpts::DEFAULT, protocol, false).unwrap();
        let m =
            RunMeasurements { trace, session, budget, wall_time_s: t0.elapsed().as_secs_f64() };
        (config, m)
    }

    #[test]
    fn whatif_scaling_arithmetic() {
        assert_eq!(whatif_response_bytes(1000, 400, 1.0), 1000);
        assert_eq!(whatif_response_bytes(1000, 400, 0.5), 800);
        assert_eq!(whatif_response_bytes(1000, 400, 0.0), 600);
    }

    #[test]
    fn infer_report_schema() {
        let (config, m) = measured_run(MoeProtocol::Sparse);
        let report = InferReport::build(
            config,
            MoeProtocol::Sparse,
            false,
            7,
            "inproc",
            Some(NetProfile::WAN),
            CFG.ell,
            1.0,
            &m,
        );
        let v = serde_json::to_value(&report).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert_eq!(v["protocol"], "sparse");
        assert!(v["online"]["payload_c_to_s"].as_u64().unwrap() > 0);
        assert!(v["online"]["payload_s_to_c"].as_u64().unwrap() > 0);
        assert!(v["setup_bytes_modeled"].as_u64().unwrap() > 0);
        assert_eq!(v["layers"].as_array().unwrap().len(), 1);
        assert!(v["layers"][0]["moe_compute"]["rounds"].as_u64().unwrap() > 0);
        assert_eq!(v["net"], "wan");
        assert!(v["modeled_time_s"].as_f64().unwrap() > 0.0);
        assert_eq!(
            v["online_bytes_whatif_response"].as_u64().unwrap(),
            report.online_bytes_total
        );

        let wan = report.modeled_wan_time_s;
        let lan = report.modeled_lan_time_s;
        assert!(wan > lan, "WAN must model slower than LAN: {wan} vs {lan}");
        assert_eq!(report.modeled_time_s.unwrap(), wan);
    }

    #[test]
    fn modeled_time_formula() {
        let stats = ChannelStats {
            payload_c_to_s: 1000,
            payload_s_to_c: 500,
            framing_c_to_s: 30,
            framing_s_to_c: 20,
            msgs_c_to_s: 3,
            msgs_s_to_c: 2,
            rounds: 4,
        };
        let lan = NetProfile::LAN.modeled_time_s(&stats);
        let expected = 4.0 * 0.5e-3 + (1550.0 * 8.0) / 1.0e9;
        assert!((lan - expected).abs() < 1e-12);
    }

    #[test]
    fn bench_flatness_grouping() {
        let (_, m) = measured_run(MoeProtocol::Sparse);
        let mk = |n: usize, protocol: MoeProtocol, moe: u64| {
            let mut row = BenchRow::build(n, protocol, CFG.ell, 1.0, &m);
            row.moe_bytes = moe;
            row
        };
        let rows = vec![
            mk(8, MoeProtocol::Sparse, 100),
            mk(128, MoeProtocol::Sparse, 110),
            mk(8, MoeProtocol::Dense, 100),
            mk(128, MoeProtocol::Dense, 1600),
        ];
        let f = flatness(&rows);
        assert_eq!(f.len(), 2);
        assert_eq!((f[0].protocol, f[0].min_experts, f[0].max_experts), (MoeProtocol::Sparse, 8, 128));
        assert!((f[0].ratio - 1.1).abs() < 1e-9);
        assert!((f[1].ratio - 16.0).abs() < 1e-9);

        let report = BenchReport::build(ModelConfig::toy(8), false, 1, 1.0, rows);
        let v = serde_json::to_value(&report).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 4);
        assert_eq!(v["flatness"].as_array().unwrap().len(), 2);
        assert_eq!(v["rows"][0]["protocol"], "sparse");
        assert!(v["rows"][0]["moe_selection_bytes"].as_u64().unwrap() > 0);
    }
}
