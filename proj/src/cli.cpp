#include "mata/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mata/errors.hpp"

namespace mata::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t token_hash(std::span<const std::size_t> tokens) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t t : tokens) {
        const auto v = static_cast<std::uint64_t>(t);
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::string token_hash_hex(std::span<const std::size_t> tokens) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << token_hash(tokens);
    return s.str();
}

std::optional<std::size_t> first_divergence(std::span<const std::size_t> a,
                                            std::span<const std::size_t> b) {
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (a[i] != b[i]) return i;
    }
    if (a.size() != b.size()) return n;
    return std::nullopt;
}

namespace {

std::vector<double> audio_mass_by_layer(const DecodeResult& r, std::size_t n_layers) {
    std::vector<double> out(n_layers, 0.0);
    for (const auto& s : aggregate(r.records, r.sequence.segments())) {
        out.at(s.layer) = mass_of(s.mean_mass, Region::Audio);
    }
    return out;
}

double mean_over(const std::vector<double>& v, LayerRange range) {
    double sum = 0.0;
    for (std::size_t l = range.start; l < range.end; ++l) sum += v.at(l);
    return sum / static_cast<double>(range.end - range.start);
}

std::string join_tokens(std::span<const std::size_t> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(tokens[i]);
    }
    return out;
}

json intervention_json(const InterventionSpec& s) {
    return {{"alpha", s.alpha},
            {"layer_start", s.layer_start},
            {"layer_end", s.layer_end},
            {"enabled", s.enabled}};
}

}  // namespace

std::string CompareReport::to_text() const {
    std::ostringstream out;
    out << "intervention: alpha=" << format_double(intervention.alpha) << " layers=["
        << intervention.layer_start << "," << intervention.layer_end << ")"
        << (intervention.enabled ? "" : " (disabled)") << "\n";
    out << "baseline tokens:   " << join_tokens(baseline_tokens) << "\n";
    out << "intervened tokens: " << join_tokens(intervened_tokens) << "\n";
    out << "first divergence step: "
        << (first_divergence_step ? std::to_string(*first_divergence_step) : "none") << "\n";
    out << "layer,audio_mass_delta\n";
    for (std::size_t l = 0; l < audio_mass_delta.size(); ++l) {
        out << l << "," << format_double(audio_mass_delta[l]) << "\n";
    }
    out << "mean delta in range: " << format_double(mean_delta_in_range) << "\n";
    out << "mean delta outside range: " << format_double(mean_delta_outside_range) << "\n";
    out << "max |delta|: " << format_double(max_abs_delta) << "\n";
    return out.str();
}

std::string CompareReport::to_json() const {
    json doc{{"intervention", intervention_json(intervention)},
             {"baseline_tokens", baseline_tokens},
             {"intervened_tokens", intervened_tokens},
             {"first_divergence_step",
              first_divergence_step ? json(*first_divergence_step) : json(nullptr)},
             {"audio_mass_delta", audio_mass_delta},
             {"summary",
              {{"mean_delta_in_range", mean_delta_in_range},
               {"mean_delta_outside_range", mean_delta_outside_range},
               {"max_abs_delta", max_abs_delta}}}};
    return doc.dump(2) + "\n";
}

CompareReport CompareReport::from_json(std::string_view text) {
    CompareReport r;
    try {
        const auto doc = json::parse(text);
        const auto& iv = doc.at("intervention");
        r.intervention.alpha = iv.at("alpha").get<double>();
        r.intervention.layer_start = iv.at("layer_start").get<std::size_t>();
        r.intervention.layer_end = iv.at("layer_end").get<std::size_t>();
        r.intervention.enabled = iv.at("enabled").get<bool>();
        r.baseline_tokens = doc.at("baseline_tokens").get<std::vector<std::size_t>>();
        r.intervened_tokens = doc.at("intervened_tokens").get<std::vector<std::size_t>>();
        if (!doc.at("first_divergence_step").is_null()) {
            r.first_divergence_step = doc.at("first_divergence_step").get<std::size_t>();
        }
        r.audio_mass_delta = doc.at("audio_mass_delta").get<std::vector<double>>();
        const auto& s = doc.at("summary");
        r.mean_delta_in_range = s.at("mean_delta_in_range").get<double>();
        r.mean_delta_outside_range = s.at("mean_delta_outside_range").get<double>();
        r.max_abs_delta = s.at("max_abs_delta").get<double>();
    } catch (const json::exception& e) {
        throw ParseError("compare report json", 0, "", e.what());
    }
    return r;
}

CompareReport compare(const ExperimentSpec& spec, const ModelWeights& weights) {
    spec.validate_against(weights.config);
    const TokenSequence prompt = spec.prompt();
    const std::size_t n_layers = weights.config.n_layers;
    const auto base =
        decode_greedy_with_hook(prompt, weights, {}, spec.max_new_tokens, spec.stop_token);
    const auto mod =
        decode_greedy(prompt, weights, spec.intervention, spec.max_new_tokens, spec.stop_token);

    CompareReport r;
    r.intervention = spec.intervention;
    r.baseline_tokens = base.generated;
    r.intervened_tokens = mod.generated;
    r.first_divergence_step = first_divergence(base.generated, mod.generated);

    const auto base_mass = audio_mass_by_layer(base, n_layers);
    const auto mod_mass = audio_mass_by_layer(mod, n_layers);
    r.audio_mass_delta.resize(n_layers);
    double in_sum = 0.0, out_sum = 0.0;
    std::size_t in_n = 0, out_n = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const double d = mod_mass[l] - base_mass[l];
        r.audio_mass_delta[l] = d;
        r.max_abs_delta = std::max(r.max_abs_delta, std::abs(d));
        if (is_active(spec.intervention, l)) {
            in_sum += d;
            ++in_n;
        } else {
            out_sum += d;
            ++out_n;
        }
    }
    r.mean_delta_in_range = in_n ? in_sum / static_cast<double>(in_n) : 0.0;
    r.mean_delta_outside_range = out_n ? out_sum / static_cast<double>(out_n) : 0.0;
    return r;
}

LayerRange parse_layer_range(std::string_view text, std::size_t n_layers) {
    const auto dash = text.find('-');
    LayerRange r{0, 0};
    bool ok = dash != std::string_view::npos;
    if (ok) {
        const auto a = text.substr(0, dash);
        const auto b = text.substr(dash + 1);
        auto [pa, ea] = std::from_chars(a.data(), a.data() + a.size(), r.start);
        auto [pb, eb] = std::from_chars(b.data(), b.data() + b.size(), r.end);
        ok = ea == std::errc() && eb == std::errc() && pa == a.data() + a.size() &&
             pb == b.data() + b.size() && !a.empty() && !b.empty();
    }
    if (!ok) throw SpanError("layer range '" + std::string(text) + "' is not of the form START-END");
    if (r.start >= r.end || r.end > n_layers) {
        throw SpanError("layer range " + std::string(text) + " must satisfy start < end <= " +
                        std::to_string(n_layers));
    }
    return r;
}

std::vector<SweepCell> default_sweep_grid() {
    return {
        {std::nullopt, std::nullopt},
        {0.05, LayerRange{10, 20}},
        {0.10, LayerRange{10, 20}},
        {0.15, LayerRange{10, 20}},
        {0.10, LayerRange{0, 10}},
        {0.10, LayerRange{20, 28}},
        {0.10, LayerRange{0, 28}},
    };
}

std::vector<SweepCell> make_sweep_grid(std::span<const double> alphas,
                                       std::span<const LayerRange> ranges) {
    if (alphas.empty() || ranges.empty()) throw EmptyInputError("sweep grid needs alphas and ranges");
    std::vector<SweepCell> grid{{std::nullopt, std::nullopt}};
    for (double a : alphas) {
        for (const auto& r : ranges) grid.push_back({a, r});
    }
    return grid;
}

std::vector<SweepRow> run_sweep(const ExperimentSpec& spec, const ModelWeights& weights,
                                std::span<const SweepCell> grid) {
    if (grid.empty()) throw EmptyInputError("empty sweep grid");
    const std::size_t n_layers = weights.config.n_layers;
    for (const auto& cell : grid) {
        if (cell.alpha.has_value() != cell.range.has_value()) {
            throw SpanError("sweep cell must set both alpha and range, or neither");
        }
        if (cell.range && (cell.range->start >= cell.range->end || cell.range->end > n_layers)) {
            throw SpanError("sweep range [" + std::to_string(cell.range->start) + ", " +
                            std::to_string(cell.range->end) + ") does not fit " +
                            std::to_string(n_layers) + " layers");
        }
        if (cell.alpha && !(*cell.alpha >= 0.0)) throw ConfigError("sweep alpha must be >= 0");
    }
    const TokenSequence prompt = spec.prompt();
    const auto baseline =
        decode_greedy_with_hook(prompt, weights, {}, spec.max_new_tokens, spec.stop_token);
    const auto baseline_mass = audio_mass_by_layer(baseline, n_layers);

    std::vector<std::future<SweepRow>> jobs;
    jobs.reserve(grid.size());
    for (const auto& cell : grid) {
        jobs.push_back(std::async(std::launch::async, [&, cell] {
            const LayerRange range = cell.range.value_or(LayerRange{0, n_layers});
            SweepRow row;
            row.cell = cell;
            const DecodeResult* result = &baseline;
            DecodeResult own;
            if (cell.alpha) {
                InterventionSpec iv;
                iv.alpha = *cell.alpha;
                iv.layer_start = range.start;
                iv.layer_end = range.end;
                own = decode_greedy(prompt, weights, iv, spec.max_new_tokens, spec.stop_token);
                result = &own;
            }
            row.token_hash = token_hash_hex(result->generated);
            row.n_generated = result->generated.size();
            row.mean_audio_mass = mean_over(audio_mass_by_layer(*result, n_layers), range);
            row.baseline_audio_mass = mean_over(baseline_mass, range);
            row.divergence_step = first_divergence(baseline.generated, result->generated);
            return row;
        }));
    }
    std::vector<SweepRow> rows;
    rows.reserve(jobs.size());
    for (auto& j : jobs) rows.push_back(j.get());
    return rows;
}

std::string sweep_to_csv(std::span<const SweepRow> rows) {
    std::string out(kSweepCsvHeader);
    out += '\n';
    for (const auto& r : rows) {
        out += r.cell.alpha ? format_double(*r.cell.alpha) : "-";
        out += ',';
        out += r.cell.range ? std::to_string(r.cell.range->start) : "-";
        out += ',';
        out += r.cell.range ? std::to_string(r.cell.range->end) : "-";
        out += ',' + r.token_hash + ',' + std::to_string(r.n_generated) + ',' +
               format_double(r.mean_audio_mass) + ',' + format_double(r.baseline_audio_mass) + ',';
        out += r.divergence_step ? std::to_string(*r.divergence_step) : "none";
        out += '\n';
    }
    return out;
}

namespace {

template <typename T>
T csv_number(std::string_view f, std::size_t line, const char* name) {
    T v{};
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (f.empty() || ec != std::errc() || p != f.data() + f.size()) {
        throw ParseError("sweep csv", line, name, "cannot parse '" + std::string(f) + "'");
    }
    return v;
}

}  // namespace

std::vector<SweepRow> sweep_from_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != kSweepCsvHeader) {
        throw ParseError("sweep csv", 1, "", "unexpected header");
    }
    std::vector<SweepRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        std::string_view rest = line;
        while (true) {
            const auto comma = rest.find(',');
            f.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest = rest.substr(comma + 1);
        }
        if (f.size() != 8) throw ParseError("sweep csv", line_no, "", "expected 8 fields");
        SweepRow r;
        if (f[0] != "-") r.cell.alpha = csv_number<double>(f[0], line_no, "alpha");
        if (f[1] != "-" || f[2] != "-") {
            r.cell.range = LayerRange{csv_number<std::size_t>(f[1], line_no, "layer_start"),
                                      csv_number<std::size_t>(f[2], line_no, "layer_end")};
        }
        r.token_hash = std::string(f[3]);
        r.n_generated = csv_number<std::size_t>(f[4], line_no, "n_generated");
        r.mean_audio_mass = csv_number<double>(f[5], line_no, "mean_audio_mass");
        r.baseline_audio_mass = csv_number<double>(f[6], line_no, "baseline_audio_mass");
        if (f[7] != "none") r.divergence_step = csv_number<std::size_t>(f[7], line_no, "divergence_step");
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string sweep_to_json(std::span<const SweepRow> rows) {
    json arr = json::array();
    for (const auto& r : rows) {
        arr.push_back({{"alpha", r.cell.alpha ? json(*r.cell.alpha) : json(nullptr)},
                       {"layer_start", r.cell.range ? json(r.cell.range->start) : json(nullptr)},
                       {"layer_end", r.cell.range ? json(r.cell.range->end) : json(nullptr)},
                       {"token_hash", r.token_hash},
                       {"n_generated", r.n_generated},
                       {"mean_audio_mass", r.mean_audio_mass},
                       {"baseline_audio_mass", r.baseline_audio_mass},
                       {"divergence_step",
                        r.divergence_step ? json(*r.divergence_step) : json(nullptr)}});
    }
    return json{{"rows", arr}}.dump(2) + "\n";
}

namespace {

// Thrown out of the loading phase so that it maps to the usage exit code.
struct InputFailure {
    std::string message;
};

fs::path output_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kTelemetryDirEnv); env && *env) return env;
    return "telemetry";
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

template <typename Fn>
auto load_input(Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        throw InputFailure{e.what()};
    } catch (const fs::filesystem_error& e) {
        throw InputFailure{e.what()};
    }
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (ch != ' ') {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"MATA attention-intervention toolkit for a toy decoder-only transformer", "mata"};
    app.require_subcommand(1);

    std::string config_path, model_out, experiment_path, telemetry_dir, json_out, csv_out;
    std::string alphas_text, ranges_text;
    std::uint64_t seed = 0;

    auto* gen = app.add_subcommand("gen-model", "Generate synthetic weights and write a weight file");
    gen->add_option("--config", config_path, "Model config file (key = value)");
    gen->add_option("--seed", seed, "PRNG seed")->required();
    gen->add_option("--out", model_out, "Output weight file")->required();

    auto* dec = app.add_subcommand("decode", "Greedy decode an experiment and write telemetry");
    dec->add_option("experiment", experiment_path, "Experiment file")->required();
    dec->add_option("--telemetry-dir", telemetry_dir,
                    std::string("Output directory (default $") + kTelemetryDirEnv +
                        " or ./telemetry)");

    auto* cmp = app.add_subcommand("compare", "Compare hook-free and intervened decodes");
    cmp->add_option("experiment", experiment_path, "Experiment file")->required();
    cmp->add_option("--json", json_out, "Report JSON path (default <telemetry-dir>/compare.json)");
    cmp->add_option("--telemetry-dir", telemetry_dir, "Output directory");

    auto* sweep = app.add_subcommand("sweep", "Sweep alpha and layer ranges");
    sweep->add_option("experiment", experiment_path, "Experiment file")->required();
    sweep->add_option("--alphas", alphas_text, "Comma-separated alphas, e.g. 0.05,0.1");
    sweep->add_option("--ranges", ranges_text, "Comma-separated layer ranges, e.g. 10-20,0-10");
    sweep->add_option("--out", csv_out, "Grid CSV path (default <telemetry-dir>/sweep.csv)");
    sweep->add_option("--telemetry-dir", telemetry_dir, "Output directory");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            const ModelConfig config = load_input([&] {
                ModelConfig c = config_path.empty() ? ModelConfig{} : load_config_file(config_path);
                c.validate();
                return c;
            });
            const ModelWeights w = gen_synthetic_weights(config, seed);
            load_input([&] {
                save_weights(w, model_out);
                return 0;
            });
            out << "wrote " << model_out << "\n";
            return kExitOk;
        }

        const auto [spec, weights] = load_input([&] {
            ExperimentSpec s = load_experiment_file(experiment_path);
            ModelWeights w = resolve_model(s);
            return std::pair{std::move(s), std::move(w)};
        });
        const fs::path dir = output_dir(telemetry_dir);

        if (dec->parsed()) {
            const auto result = decode_greedy(spec.prompt(), weights, spec.intervention,
                                              spec.max_new_tokens, spec.stop_token);
            const auto summaries = aggregate(result.records, result.sequence.segments());
            write_text(dir / "telemetry.csv", summaries_to_csv(summaries));
            write_text(dir / "telemetry.json", summaries_to_json(summaries));
            out << "generated: " << join_tokens(result.generated) << "\n";
            out << "telemetry: " << (dir / "telemetry.csv").string() << " "
                << (dir / "telemetry.json").string() << "\n";
            return kExitOk;
        }

        if (cmp->parsed()) {
            const CompareReport report = compare(spec, weights);
            const fs::path path = json_out.empty() ? dir / "compare.json" : fs::path(json_out);
            write_text(path, report.to_json());
            out << report.to_text();
            return kExitOk;
        }

        if (sweep->parsed()) {
            const auto grid = load_input([&] {
                if (alphas_text.empty() && ranges_text.empty()) return default_sweep_grid();
                std::vector<double> alphas;
                for (const auto& a : split_list(alphas_text.empty() ? "0.1" : alphas_text)) {
                    double v = 0.0;
                    auto [p, ec] = std::from_chars(a.data(), a.data() + a.size(), v);
                    if (ec != std::errc() || p != a.data() + a.size() || !(v >= 0.0)) {
                        throw ParseError("--alphas", 0, "", "bad alpha '" + a + "'");
                    }
                    alphas.push_back(v);
                }
                std::vector<LayerRange> ranges;
                for (const auto& r : split_list(ranges_text.empty() ? "10-20" : ranges_text)) {
                    ranges.push_back(parse_layer_range(r, weights.config.n_layers));
                }
                return make_sweep_grid(alphas, ranges);
            });
            load_input([&] {
                for (const auto& cell : grid) {
                    if (cell.range && cell.range->end > weights.config.n_layers) {
                        throw SpanError("sweep range " + std::to_string(cell.range->start) + "-" +
                                        std::to_string(cell.range->end) + " does not fit a " +
                                        std::to_string(weights.config.n_layers) + "-layer model");
                    }
                }
                return 0;
            });
            const auto rows = run_sweep(spec, weights, grid);
            const fs::path csv_path = csv_out.empty() ? dir / "sweep.csv" : fs::path(csv_out);
            fs::path json_path = csv_path;
            json_path.replace_extension(".json");
            const std::string csv = sweep_to_csv(rows);
            write_text(csv_path, csv);
            write_text(json_path, sweep_to_json(rows));
            out << csv;
            return kExitOk;
        }
    } catch (const InputFailure& e) {
        err << "error: " << e.message << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitEngine;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitEngine;
    }
    return kExitUsage;
}

}  // namespace mata::cli
