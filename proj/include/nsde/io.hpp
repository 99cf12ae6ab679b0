#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "diagnostics.hpp"
#include "estimation.hpp"
#include "mlp.hpp"
#include "numeric.hpp"
#include "sde_model.hpp"

namespace nsde {

using json = nlohmann::json;

inline constexpr int kModelFormatVersion = 1;

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

/// Shortest decimal form that parses back to the same double.
inline std::string format_number(double v) {
    if (!std::isfinite(v)) throw NumericalError("format_number: non-finite value");
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

/// Writes to `path.tmp` then renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw ValidationError("cannot open " + tmp.string() + " for writing");
        os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!os) throw ValidationError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Trajectory files (JSON Lines)
// ---------------------------------------------------------------------------

struct TrajectorySet {
    std::vector<EmbeddingTrajectory> trajectories;
    std::vector<std::string> ids;
    std::vector<std::string> warnings;
};

inline EmbeddingTrajectory trajectory_from_json(const json& rec) {
    if (!rec.is_object()) throw FormatError("record is not a JSON object");
    if (!rec.contains("embeddings") || !rec["embeddings"].is_array())
        throw FormatError("missing 'embeddings' array");
    EmbeddingTrajectory tr;
    for (const auto& e : rec["embeddings"]) {
        if (!e.is_array()) throw FormatError("embedding is not an array");
        Vector v;
        for (const auto& c : e) {
            if (!c.is_number()) throw FormatError("embedding component is not a number");
            v.push_back(c.get<double>());
        }
        tr.states.push_back(std::move(v));
    }
    if (tr.states.empty()) throw ValidationError("'embeddings' is empty");
    if (rec.contains("times") && !rec["times"].is_null()) {
        for (const auto& t : rec["times"]) {
            if (!t.is_number()) throw FormatError("time is not a number");
            tr.times.push_back(t.get<double>());
        }
    } else {
        for (std::size_t i = 0; i < tr.states.size(); ++i) tr.times.push_back(static_cast<double>(i));
    }
    if (rec.contains("tokens") && !rec["tokens"].is_null()) {
        std::vector<std::string> tokens;
        for (const auto& t : rec["tokens"]) {
            if (!t.is_string()) throw FormatError("token is not a string");
            tokens.push_back(t.get<std::string>());
        }
        tr.tokens = std::move(tokens);
    }
    tr.validate();
    return tr;
}

inline json trajectory_to_json(const EmbeddingTrajectory& tr, const std::string& id) {
    json rec;
    rec["id"] = id;
    if (tr.tokens) rec["tokens"] = *tr.tokens;
    rec["embeddings"] = tr.states;
    rec["times"] = tr.times;
    return rec;
}

/// Parses JSONL text. Errors name the 1-based line.
inline TrajectorySet parse_trajectories(std::string_view text) {
    TrajectorySet out;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
            if (end == text.size()) break;
            continue;
        }
        const std::string where = "line " + std::to_string(line_no) + ": ";
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(where + "malformed JSON (" + e.what() + ")");
        }
        EmbeddingTrajectory tr;
        try {
            tr = trajectory_from_json(rec);
        } catch (const DimensionError& e) {
            throw DimensionError(where + e.what());
        } catch (const FormatError& e) {
            throw FormatError(where + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
        if (out.trajectories.empty()) {
            dim = tr.dim();
        } else if (tr.dim() != dim) {
            throw DimensionError(where + "dimension " + std::to_string(tr.dim()) +
                                 " differs from " + std::to_string(dim) + " of earlier records");
        }
        out.ids.push_back(rec.contains("id") && rec["id"].is_string()
                              ? rec["id"].get<std::string>()
                              : std::to_string(out.trajectories.size()));
        out.trajectories.push_back(std::move(tr));
        if (end == text.size()) break;
    }
    if (out.trajectories.empty()) out.warnings.push_back("no trajectories found");
    return out;
}

inline TrajectorySet load_trajectories(const std::filesystem::path& path) {
    return parse_trajectories(read_file(path));
}

inline std::string serialize_trajectories(std::span<const EmbeddingTrajectory> trajectories,
                                          std::span<const std::string> ids = {}) {
    std::string out;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const std::string id = i < ids.size() ? ids[i] : std::to_string(i);
        out += trajectory_to_json(trajectories[i], id).dump();
        out += '\n';
    }
    return out;
}

inline void save_trajectories(const std::filesystem::path& path,
                              std::span<const EmbeddingTrajectory> trajectories,
                              std::span<const std::string> ids = {}) {
    write_file_atomic(path, serialize_trajectories(trajectories, ids));
}

// ---------------------------------------------------------------------------
// Toy embedder
// ---------------------------------------------------------------------------

/// Whitespace tokens mapped to hash-seeded vectors in [-1, 1]^d.
/// Test scaffolding only: the vectors carry no semantics.
inline EmbeddingTrajectory toy_embed(std::string_view text, std::size_t d) {
    if (d < 1) throw ValidationError("toy_embed: d must be >= 1");
    EmbeddingTrajectory tr;
    std::vector<std::string> tokens;
    std::istringstream is{std::string(text)};
    for (std::string tok; is >> tok;) tokens.push_back(tok);
    if (tokens.empty()) throw ValidationError("toy_embed: text has no tokens");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        RngStream rng(fnv1a64(tokens[i]));
        Vector v(d);
        for (auto& c : v) c = rng.uniform(-1.0, 1.0);
        tr.states.push_back(std::move(v));
        tr.times.push_back(static_cast<double>(i));
    }
    tr.tokens = std::move(tokens);
    return tr;
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

struct ModelFile {
    SdeModel model;
    std::optional<TrainingConfig> training_config;
    std::vector<LossRecord> loss_history;
};

namespace detail {

inline std::string to_string(HiddenActivation a) { return a == HiddenActivation::tanh ? "tanh" : "relu"; }
inline std::string to_string(OutputActivation a) {
    return a == OutputActivation::identity ? "identity" : "softplus";
}

inline HiddenActivation hidden_from(const std::string& s) {
    if (s == "tanh") return HiddenActivation::tanh;
    if (s == "relu") return HiddenActivation::relu;
    throw FormatError("unknown hidden activation '" + s + "'");
}

inline OutputActivation output_from(const std::string& s) {
    if (s == "identity") return OutputActivation::identity;
    if (s == "softplus") return OutputActivation::softplus;
    throw FormatError("unknown output activation '" + s + "'");
}

inline TimeEncoding::Kind encoding_from(const std::string& s) {
    if (s == "none") return TimeEncoding::Kind::none;
    if (s == "scalar_normalized") return TimeEncoding::Kind::scalar_normalized;
    if (s == "sinusoidal") return TimeEncoding::Kind::sinusoidal;
    throw FormatError("unknown time encoding '" + s + "'");
}

inline json net_to_json(const MlpNetwork& net) {
    json j;
    j["layer_dims"] = net.layer_dims;
    j["hidden_activation"] = to_string(net.hidden_activation);
    j["output_activation"] = to_string(net.output_activation);
    j["weights"] = json::array();
    j["biases"] = json::array();
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        auto w = net.weights[l].data();
        j["weights"].push_back(std::vector<double>(w.begin(), w.end()));
        j["biases"].push_back(net.biases[l]);
    }
    return j;
}

inline MlpNetwork net_from_json(const json& j) {
    MlpNetwork net;
    net.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    net.hidden_activation = hidden_from(j.at("hidden_activation").get<std::string>());
    net.output_activation = output_from(j.at("output_activation").get<std::string>());
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    if (net.layer_dims.size() < 2 || ws.size() != net.layer_dims.size() - 1 ||
        bs.size() != ws.size())
        throw FormatError("network layer count mismatch");
    for (std::size_t l = 0; l < ws.size(); ++l) {
        net.weights.emplace_back(net.layer_dims[l + 1], net.layer_dims[l],
                                 ws[l].get<std::vector<double>>());
        net.biases.push_back(bs[l].get<Vector>());
    }
    validate(net);
    return net;
}

inline json config_to_json(const TrainingConfig& c) {
    json j;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["drift_weight"] = c.drift_weight;
    j["diffusion_weight"] = c.diffusion_weight;
    j["seed"] = c.seed;
    j["validation_fraction"] = c.validation_fraction;
    j["grad_clip"] = c.grad_clip ? json(*c.grad_clip) : json(nullptr);
    j["hidden_layers"] = c.hidden_layers;
    j["hidden_activation"] = to_string(c.hidden_activation);
    j["time_encoding"] = nsde::to_string(c.time_encoding);
    j["sinusoidal_pairs"] = c.sinusoidal_pairs;
    return j;
}

inline TrainingConfig config_from_json(const json& j) {
    TrainingConfig c;
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.drift_weight = j.at("drift_weight").get<double>();
    c.diffusion_weight = j.at("diffusion_weight").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validation_fraction = j.at("validation_fraction").get<double>();
    if (j.at("grad_clip").is_null()) c.grad_clip.reset();
    else c.grad_clip = j.at("grad_clip").get<double>();
    c.hidden_layers = j.at("hidden_layers").get<std::vector<std::size_t>>();
    c.hidden_activation = hidden_from(j.at("hidden_activation").get<std::string>());
    c.time_encoding = encoding_from(j.at("time_encoding").get<std::string>());
    c.sinusoidal_pairs = j.at("sinusoidal_pairs").get<std::size_t>();
    return c;
}

}  // namespace detail

inline std::string serialize_model(const ModelFile& mf) {
    json doc;
    doc["format_version"] = kModelFormatVersion;
    doc["dim"] = mf.model.dim();
    const auto& enc = mf.model.time_encoding();
    doc["time_encoding"] = {{"kind", to_string(enc.kind)},
                            {"pairs", enc.pairs},
                            {"time_scale", enc.time_scale}};
    doc["drift_net"] = detail::net_to_json(mf.model.drift_net());
    doc["diffusion_net"] = detail::net_to_json(mf.model.diffusion_net());
    doc["training_config"] =
        mf.training_config ? detail::config_to_json(*mf.training_config) : json(nullptr);
    doc["loss_history"] = json::array();
    for (const auto& r : mf.loss_history) {
        doc["loss_history"].push_back({{"epoch", r.epoch},
                                       {"split", to_string(r.split)},
                                       {"total", r.total},
                                       {"drift", r.drift},
                                       {"diffusion", r.diffusion}});
    }
    doc["checksum"] = hex64(fnv1a64(doc.dump()));
    return doc.dump(1) + "\n";
}

/// Parses and verifies a model document; never returns a partial model.
inline ModelFile parse_model(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("model file: parse error (") + e.what() + ")");
    }
    try {
        if (!doc.is_object()) throw FormatError("model file: not a JSON object");
        const int version = doc.at("format_version").get<int>();
        if (version != kModelFormatVersion)
            throw VersionError("model file: format_version " + std::to_string(version) +
                               " unsupported (expected " + std::to_string(kModelFormatVersion) +
                               ")");
        const std::string stored = doc.at("checksum").get<std::string>();
        doc.erase("checksum");
        if (hex64(fnv1a64(doc.dump())) != stored)
            throw FormatError("model file: checksum mismatch (corrupt file)");

        TimeEncoding enc;
        const auto& je = doc.at("time_encoding");
        enc.kind = detail::encoding_from(je.at("kind").get<std::string>());
        enc.pairs = je.at("pairs").get<std::size_t>();
        enc.time_scale = je.at("time_scale").get<double>();
        SdeModel model(doc.at("dim").get<std::size_t>(), detail::net_from_json(doc.at("drift_net")),
                       detail::net_from_json(doc.at("diffusion_net")), enc);
        ModelFile mf{std::move(model), std::nullopt, {}};
        if (!doc.at("training_config").is_null())
            mf.training_config = detail::config_from_json(doc.at("training_config"));
        for (const auto& r : doc.at("loss_history")) {
            mf.loss_history.push_back(
                {r.at("epoch").get<int>(), r.at("total").get<double>(), r.at("drift").get<double>(),
                 r.at("diffusion").get<double>(),
                 r.at("split").get<std::string>() == "train" ? Split::train : Split::validation});
        }
        return mf;
    } catch (const json::exception& e) {
        throw FormatError(std::string("model file: ") + e.what());
    }
}

inline void save_model(const std::filesystem::path& path, const ModelFile& mf) {
    write_file_atomic(path, serialize_model(mf));
}

inline ModelFile load_model(const std::filesystem::path& path) { return parse_model(read_file(path)); }

// ---------------------------------------------------------------------------
// CSV plot data
// ---------------------------------------------------------------------------

/// Quotes a field when it contains a separator, quote or line break.
inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

/// Accumulates rows and writes them atomically with '\n' line endings.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
        append_row_strings(header);
    }

    CsvWriter& row(std::initializer_list<std::string> cells) {
        append_row_strings(std::vector<std::string>(cells));
        return *this;
    }

    std::string str() const { return buf_; }
    void save(const std::filesystem::path& path) const { write_file_atomic(path, buf_); }

private:
    void append_row_strings(const std::vector<std::string>& cells) {
        if (cells.size() != columns_) throw ValidationError("csv: wrong column count");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) buf_ += ',';
            buf_ += cells[i];
        }
        buf_ += '\n';
    }

    std::size_t columns_;
    std::string buf_;
};

inline std::string num(double v) { return format_number(v); }
inline std::string num(std::size_t v) { return std::to_string(v); }

inline CsvWriter losses_csv(std::span<const LossRecord> history) {
    CsvWriter w({"epoch", "split", "total", "drift", "diffusion"});
    for (const auto& r : history)
        w.row({std::to_string(r.epoch), to_string(r.split), num(r.total), num(r.drift),
               num(r.diffusion)});
    return w;
}

inline CsvWriter vector_field_csv(const VectorFieldGrid& field) {
    CsvWriter w({"gx", "gy", "ux", "uy", "diffusion_mag"});
    for (std::size_t i = 0; i < field.grid_points.size(); ++i)
        w.row({num(field.grid_points[i][0]), num(field.grid_points[i][1]),
               num(field.drift_arrows[i][0]), num(field.drift_arrows[i][1]),
               num(field.diffusion_magnitudes[i])});
    return w;
}

inline CsvWriter heatmap_csv(std::span<const HeatmapEntry> entries) {
    CsvWriter w({"position", "token", "magnitude", "log_magnitude"});
    for (const auto& e : entries)
        w.row({num(e.position), csv_field(e.token), num(e.magnitude), num(e.log_magnitude)});
    return w;
}

inline CsvWriter importance_csv(const WordImportance& imp) {
    CsvWriter w({"position", "token", "l2_norm"});
    for (const auto& e : imp.entries) w.row({num(e.position), csv_field(e.token), num(e.l2_norm)});
    return w;
}

/// ODE columns are required: moments.csv always pairs MC with a linear reference.
inline CsvWriter moments_csv(const MomentReport& rep) {
    if (rep.mean_ode.size() != rep.t_grid.size())
        throw ValidationError("moments.csv needs ODE reference curves");
    CsvWriter w({"t", "mean_ode", "var_ode", "mean_mc", "var_mc"});
    for (std::size_t j = 0; j < rep.t_grid.size(); ++j)
        w.row({num(rep.t_grid[j]), num(rep.mean_ode[j]), num(rep.var_ode[j]), num(rep.mean_mc[j]),
               num(rep.var_mc[j])});
    return w;
}

/// Per-step teacher-forced errors plus both trajectories in the 2-D PCA plane.
inline CsvWriter trajectory_compare_csv(std::span<const TrajectoryComparison> comparisons,
                                        std::span<const EmbeddingTrajectory> actual,
                                        std::span<const std::string> ids, const PcaFit& plane) {
    CsvWriter w({"trajectory", "step", "error", "actual_pc1", "actual_pc2", "pred_pc1", "pred_pc2"});
    for (std::size_t k = 0; k < comparisons.size(); ++k) {
        const auto& cmp = comparisons[k];
        for (std::size_t i = 0; i < actual[k].size(); ++i) {
            const Vector pa = pca_project(plane, actual[k].states[i]);
            const Vector pp = pca_project(plane, cmp.predicted.states[i]);
            const double err = i == 0 ? 0.0 : cmp.per_step_errors[i - 1];
            auto coord = [&](const Vector& p, std::size_t c) { return c < p.size() ? p[c] : 0.0; };
            w.row({csv_field(ids[k]), num(i), num(err), num(coord(pa, 0)), num(coord(pa, 1)),
                   num(coord(pp, 0)), num(coord(pp, 1))});
        }
    }
    return w;
}

}  // namespace nsde
