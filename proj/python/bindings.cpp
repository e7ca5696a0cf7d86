#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mata/cli.hpp"
#include "mata/engine.hpp"
#include "mata/errors.hpp"
#include "mata/experiment.hpp"
#include "mata/intervention.hpp"
#include "mata/model.hpp"
#include "mata/sequence.hpp"
#include "mata/telemetry.hpp"
#include "mata/tensor.hpp"

namespace py = pybind11;
using namespace mata;

namespace {

std::vector<std::vector<double>> to_rows(const Matrix& m) {
    std::vector<std::vector<double>> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
    return out;
}

py::dict masses_dict(const RegionMasses& m) {
    py::dict d;
    for (Region r : kAllRegions) d[py::str(std::string(region_name(r)))] = mass_of(m, r);
    return d;
}

}  // namespace

PYBIND11_MODULE(_mata, m) {
    m.doc() = "Toy decoder-only transformer with the MATA attention intervention";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ShapeError>(m, "ShapeError", base);
    py::register_exception<DegenerateRowError>(m, "DegenerateRowError", base);
    py::register_exception<EmptyInputError>(m, "EmptyInputError", base);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<CapacityError>(m, "CapacityError", base);
    py::register_exception<SpanError>(m, "SpanError", base);
    py::register_exception<SegmentationError>(m, "SegmentationError", base);
    py::register_exception<IoError>(m, "IoError", base);
    py::register_exception<FormatError>(m, "FormatError", base);
    py::register_exception<ParseError>(m, "ParseError", base);

    m.attr("MASK_SENTINEL") = kMaskSentinel;

    m.def("softmax_row", [](const std::vector<double>& s) { return softmax_row(s); });
    m.def("rms_norm", [](const std::vector<double>& x, const std::vector<double>& g, double eps) {
        return rms_norm(x, g, eps);
    });
    m.def("rope_apply", [](const std::vector<std::vector<double>>& rows, std::size_t offset) {
        std::size_t cols = rows.empty() ? 0 : rows.front().size();
        Matrix q(0, cols);
        for (const auto& r : rows) {
            if (r.size() != cols) throw ShapeError("rope_apply: ragged rows");
            q.append_rows(r);
        }
        return to_rows(rope_apply(q, offset));
    }, py::arg("rows"), py::arg("position_offset"));
    m.def("argmax_tie_low", [](const std::vector<double>& v) { return argmax_tie_low(v); });

    py::enum_<Region>(m, "Region")
        .value("SYSTEM", Region::System)
        .value("AUDIO", Region::Audio)
        .value("INSTRUCTION", Region::Instruction)
        .value("GENERATED", Region::Generated);

    py::class_<Segment>(m, "Segment")
        .def_readonly("region", &Segment::region)
        .def_readonly("start", &Segment::start)
        .def_readonly("end_inclusive", &Segment::end_inclusive)
        .def("__repr__", [](const Segment& s) {
            return "Segment(" + std::string(region_name(s.region)) + ", " +
                   std::to_string(s.start) + ", " + std::to_string(s.end_inclusive) + ")";
        });

    py::class_<AudioSpan>(m, "AudioSpan")
        .def(py::init<std::size_t, std::size_t>(), py::arg("start"), py::arg("end_inclusive"))
        .def_readwrite("start", &AudioSpan::start)
        .def_readwrite("end_inclusive", &AudioSpan::end_inclusive)
        .def(py::self == py::self);

    py::class_<TokenSequence>(m, "TokenSequence")
        .def_static("from_regions",
                    [](const std::vector<std::size_t>& s, const std::vector<std::size_t>& a,
                       const std::vector<std::size_t>& i) {
                        return TokenSequence::from_regions(s, a, i);
                    },
                    py::arg("system"), py::arg("audio"), py::arg("instruction"))
        .def_property_readonly("tokens", &TokenSequence::tokens)
        .def_property_readonly("segments", &TokenSequence::segments)
        .def("audio_span", &TokenSequence::audio_span)
        .def("__len__", &TokenSequence::size);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("d_ff", &ModelConfig::d_ff)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def_readwrite("norm_eps", &ModelConfig::norm_eps)
        .def_property_readonly("d_head", &ModelConfig::d_head)
        .def("validate", &ModelConfig::validate)
        .def("to_text", [](const ModelConfig& c) { return format_config_text(c); })
        .def_static("from_text", [](const std::string& t) { return parse_config_text(t, "<text>"); })
        .def(py::self == py::self);

    py::class_<ModelWeights>(m, "ModelWeights")
        .def_readonly("config", &ModelWeights::config)
        .def_property_readonly("token_embedding",
                               [](const ModelWeights& w) { return to_rows(w.token_embedding); })
        .def_property_readonly("lm_head", [](const ModelWeights& w) { return to_rows(w.lm_head); })
        .def("to_bytes", [](const ModelWeights& w) {
            auto b = serialize_weights(w);
            return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
        })
        .def_static("from_bytes", [](const py::bytes& data) {
            std::string s = data;
            std::vector<std::uint8_t> b(s.begin(), s.end());
            return deserialize_weights(b);
        })
        .def("validate", &ModelWeights::validate)
        .def(py::self == py::self);

    m.def("gen_synthetic_weights", &gen_synthetic_weights, py::arg("config"), py::arg("seed"));
    m.def("save_weights", &save_weights, py::arg("weights"), py::arg("path"));
    m.def("load_weights", &load_weights, py::arg("path"));

    py::class_<InterventionSpec>(m, "InterventionSpec")
        .def(py::init([](double alpha, std::size_t start, std::size_t end, bool enabled) {
                 InterventionSpec s;
                 s.alpha = alpha;
                 s.layer_start = start;
                 s.layer_end = end;
                 s.enabled = enabled;
                 return s;
             }),
             py::arg("alpha") = 0.1, py::arg("layer_start") = 10, py::arg("layer_end") = 20,
             py::arg("enabled") = true)
        .def_readwrite("alpha", &InterventionSpec::alpha)
        .def_readwrite("layer_start", &InterventionSpec::layer_start)
        .def_readwrite("layer_end", &InterventionSpec::layer_end)
        .def_readwrite("enabled", &InterventionSpec::enabled)
        .def("validate", &InterventionSpec::validate, py::arg("n_layers"))
        .def(py::self == py::self);

    m.def("make_noop", &make_noop);
    m.def("is_active", &is_active, py::arg("spec"), py::arg("layer"));
    m.def("mata_transform",
          [](const std::vector<double>& row, const InterventionSpec& spec, std::size_t layer,
             std::size_t query_pos, std::size_t seq_len, AudioSpan audio) {
              return mata_transform(row, spec, layer, query_pos, seq_len, audio);
          },
          py::arg("row"), py::arg("spec"), py::arg("layer"), py::arg("query_pos"),
          py::arg("seq_len"), py::arg("audio"));

    py::class_<AttentionRecord>(m, "AttentionRecord")
        .def_readonly("step", &AttentionRecord::step)
        .def_readonly("layer", &AttentionRecord::layer)
        .def_readonly("head", &AttentionRecord::head)
        .def_readonly("row", &AttentionRecord::row);

    py::class_<LayerRegionSummary>(m, "LayerRegionSummary")
        .def_readonly("layer", &LayerRegionSummary::layer)
        .def_readonly("n_steps", &LayerRegionSummary::n_steps)
        .def_property_readonly("mean_mass",
                               [](const LayerRegionSummary& s) { return masses_dict(s.mean_mass); });

    py::class_<DecodeResult>(m, "DecodeResult")
        .def_readonly("sequence", &DecodeResult::sequence)
        .def_readonly("generated", &DecodeResult::generated)
        .def_readonly("step_logits", &DecodeResult::step_logits)
        .def_readonly("records", &DecodeResult::records);

    m.def("decode_greedy",
          [](const TokenSequence& seq, const ModelWeights& w, const InterventionSpec& spec,
             std::size_t max_new, std::optional<std::size_t> stop) {
              py::gil_scoped_release release;
              return decode_greedy(seq, w, spec, max_new, stop);
          },
          py::arg("sequence"), py::arg("weights"), py::arg("spec"), py::arg("max_new_tokens"),
          py::arg("stop_token") = py::none());

    m.def("region_mass",
          [](const std::vector<double>& row, const std::vector<Segment>& segs, std::size_t len) {
              return masses_dict(region_mass(row, segs, len));
          },
          py::arg("row"), py::arg("segments"), py::arg("current_length"));
    m.def("aggregate",
          [](const std::vector<AttentionRecord>& records, const std::vector<Segment>& segs) {
              return aggregate(records, segs);
          },
          py::arg("records"), py::arg("segments"));
    m.def("summaries_to_csv",
          [](const std::vector<LayerRegionSummary>& s) { return summaries_to_csv(s); });
    m.def("summaries_to_json",
          [](const std::vector<LayerRegionSummary>& s) { return summaries_to_json(s); });

    m.def("token_hash_hex",
          [](const std::vector<std::size_t>& t) { return cli::token_hash_hex(t); });

    m.def("cli_run", [](const std::vector<std::string>& args) {
        std::ostringstream out;
        std::ostringstream err;
        int code;
        {
            py::gil_scoped_release release;
            code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
    }, py::arg("args"));
}
