#include "msfan/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "msfan/error.hpp"
#include "msfan/rng.hpp"

namespace msfan {

std::vector<std::size_t> MultiDomainDataset::domain_indices(int domain_id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].domain_id == domain_id) out.push_back(i);
    return out;
}

void MultiDomainDataset::validate_for_training() const {
    if (n_sources < 1) throw DataError("dataset: needs at least one source domain");
    if (n_classes < 2) throw DataError("dataset: needs at least two classes");
    std::vector<std::size_t> domain_counts(static_cast<std::size_t>(n_sources) + 1, 0);
    std::vector<std::vector<int>> labeled_per_class(static_cast<std::size_t>(n_sources),
                                                    std::vector<int>(static_cast<std::size_t>(n_classes), 0));
    for (const DomainSample& s : samples) {
        if (s.domain_id < 0 || s.domain_id > n_sources)
            throw DataError("dataset: sample domain_id out of range");
        if (static_cast<int>(s.raw.size()) != input_dim)
            throw DataError("dataset: inconsistent input dimension");
        domain_counts[static_cast<std::size_t>(s.domain_id)]++;
        if (s.is_labeled) {
            if (s.domain_id == n_sources) throw DataError("dataset: target sample carries a visible label");
            if (s.label < 0 || s.label >= n_classes) throw DataError("dataset: label out of range");
            labeled_per_class[static_cast<std::size_t>(s.domain_id)]
                             [static_cast<std::size_t>(s.label)]++;
        }
    }
    for (std::size_t d = 0; d < domain_counts.size(); ++d)
        if (domain_counts[d] == 0)
            throw DataError("dataset: domain " + std::to_string(d) + " has no samples");
    for (int d = 0; d < n_sources; ++d)
        for (int c = 0; c < n_classes; ++c)
            if (labeled_per_class[static_cast<std::size_t>(d)][static_cast<std::size_t>(c)] == 0)
                throw DataError("dataset: source " + std::to_string(d) + " has no labeled sample for class " +
                                std::to_string(c));
    if (!eval_labels.empty() && eval_labels.size() != samples.size())
        throw DataError("dataset: eval label count does not match sample count");
}

void GeneratorConfig::validate() const {
    if (n_sources < 1) throw ConfigError("generator: n_sources must be >= 1");
    if (n_classes < 2) throw ConfigError("generator: n_classes must be >= 2");
    if (input_dim < 1) throw ConfigError("generator: input_dim must be >= 1");
    if (samples_per_class < 1) throw ConfigError("generator: samples_per_class must be >= 1");
    if (shots_per_class < 1) throw ConfigError("generator: shots_per_class must be >= 1");
    if (shots_per_class > samples_per_class)
        throw ConfigError("generator: shots_per_class exceeds samples_per_class");
    if (!(class_separation > 0.0)) throw ConfigError("generator: class_separation must be > 0");
    if (domain_shift < 0.0) throw ConfigError("generator: domain_shift must be >= 0");
    if (noise_sigma < 0.0) throw ConfigError("generator: noise_sigma must be >= 0");
}

namespace {

// Class means on the sphere of radius class_separation, resampled until all
// pairwise distances reach class_separation as well.
Matrix draw_class_means(const GeneratorConfig& cfg, Rng& rng) {
    const std::size_t d = static_cast<std::size_t>(cfg.input_dim);
    Matrix means(static_cast<std::size_t>(cfg.n_classes), d);
    for (std::size_t c = 0; c < means.rows; ++c) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            std::vector<double> dir(d);
            for (double& v : dir) v = rng.normal();
            const double r = norm2(dir);
            if (!(r > 0.0)) continue;
            for (std::size_t j = 0; j < d; ++j) means(c, j) = cfg.class_separation * dir[j] / r;
            placed = true;
            for (std::size_t prev = 0; prev < c && placed; ++prev) {
                double dist2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = means(c, j) - means(prev, j);
                    dist2 += diff * diff;
                }
                if (dist2 < cfg.class_separation * cfg.class_separation) placed = false;
            }
        }
        if (!placed)
            throw ConfigError("generator: cannot place " + std::to_string(cfg.n_classes) +
                              " class means at separation " + std::to_string(cfg.class_separation) +
                              " in dimension " + std::to_string(cfg.input_dim));
    }
    return means;
}

// Orthogonal factor of I + (shift/sqrt(d))*G via modified Gram-Schmidt, with
// the sign convention that makes Q -> I as shift -> 0. The 1/sqrt(d) keeps the
// relative size of the perturbation independent of the dimension.
Matrix random_rotation(std::size_t d, double shift, Rng& rng) {
    const double scale = shift / std::sqrt(static_cast<double>(d));
    Matrix b(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) b(i, j) = (i == j ? 1.0 : 0.0) + scale * rng.normal();

    Matrix q(d, d);
    for (std::size_t col = 0; col < d; ++col) {
        std::vector<double> v(d);
        for (std::size_t i = 0; i < d; ++i) v[i] = b(i, col);
        for (std::size_t prev = 0; prev < col; ++prev) {
            double proj = 0.0;
            for (std::size_t i = 0; i < d; ++i) proj += q(i, prev) * v[i];
            for (std::size_t i = 0; i < d; ++i) v[i] -= proj * q(i, prev);
        }
        double r = norm2(v);
        if (!(r > 1e-12)) throw NumericError("generator: degenerate rotation draw");
        // Diagonal of R positive so shift = 0 yields the identity.
        double sign_ref = v[col] >= 0.0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < d; ++i) q(i, col) = sign_ref * v[i] / r;
    }
    return q;
}

void fmt_double(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

const char* split_name(const DomainSample& s, int target_domain) {
    if (s.domain_id == target_domain) return "target";
    return s.is_labeled ? "labeled" : "unlabeled";
}

} // namespace

GeneratedDataset generate_synthetic_detailed(const GeneratorConfig& cfg) {
    cfg.validate();
    const std::size_t d = static_cast<std::size_t>(cfg.input_dim);
    const int domains = cfg.n_sources + 1;

    Rng mean_rng = Rng(cfg.seed).derive(0x6d65616eULL);
    Matrix means = draw_class_means(cfg, mean_rng);

    GeneratedDataset out;
    MultiDomainDataset& ds = out.dataset;
    ds.n_sources = cfg.n_sources;
    ds.n_classes = cfg.n_classes;
    ds.input_dim = cfg.input_dim;

    const std::size_t per_domain =
        static_cast<std::size_t>(cfg.n_classes) * static_cast<std::size_t>(cfg.samples_per_class);
    ds.samples.reserve(per_domain * static_cast<std::size_t>(domains));
    ds.eval_labels.reserve(ds.samples.capacity());
    out.latents = Matrix(per_domain * static_cast<std::size_t>(domains), d);

    std::size_t row = 0;
    for (int dom = 0; dom < domains; ++dom) {
        Rng map_rng = Rng(cfg.seed).derive(Rng::mix(0x6d6170ULL, static_cast<std::uint64_t>(dom)));
        Matrix rotation = random_rotation(d, cfg.domain_shift, map_rng);
        // Translation of norm shift * class_separation: displaces a typical
        // point by about the same amount as the rotation does.
        std::vector<double> translation(d);
        for (double& v : translation) v = map_rng.normal();
        const double t_norm = norm2(translation);
        if (t_norm > 0.0)
            for (double& v : translation)
                v *= cfg.domain_shift * cfg.class_separation / t_norm;

        Rng noise_rng = Rng(cfg.seed).derive(Rng::mix(0x6e6f697365ULL, static_cast<std::uint64_t>(dom)));
        for (int c = 0; c < cfg.n_classes; ++c) {
            for (int s = 0; s < cfg.samples_per_class; ++s) {
                std::vector<double> latent(d);
                for (std::size_t j = 0; j < d; ++j)
                    latent[j] = means(static_cast<std::size_t>(c), j) + cfg.noise_sigma * noise_rng.normal();
                for (std::size_t j = 0; j < d; ++j) out.latents(row, j) = latent[j];

                DomainSample sample;
                sample.domain_id = dom;
                sample.raw.assign(d, 0.0);
                for (std::size_t i = 0; i < d; ++i) {
                    double acc = translation[i];
                    for (std::size_t j = 0; j < d; ++j) acc += rotation(i, j) * latent[j];
                    sample.raw[i] = acc;
                }
                ds.samples.push_back(std::move(sample));
                ds.eval_labels.push_back(c);
                ++row;
            }
        }
    }

    // Seeded selection of the labeled shots in each source domain.
    for (int dom = 0; dom < cfg.n_sources; ++dom) {
        Rng pick_rng = Rng(cfg.seed).derive(Rng::mix(0x7069636bULL, static_cast<std::uint64_t>(dom)));
        const std::size_t base = static_cast<std::size_t>(dom) * per_domain;
        for (int c = 0; c < cfg.n_classes; ++c) {
            std::vector<std::size_t> pool(static_cast<std::size_t>(cfg.samples_per_class));
            for (std::size_t s = 0; s < pool.size(); ++s)
                pool[s] = base + static_cast<std::size_t>(c) * static_cast<std::size_t>(cfg.samples_per_class) + s;
            pick_rng.shuffle(pool);
            for (int s = 0; s < cfg.shots_per_class; ++s) {
                DomainSample& sample = ds.samples[pool[static_cast<std::size_t>(s)]];
                sample.is_labeled = true;
                sample.label = c;
            }
        }
    }
    return out;
}

MultiDomainDataset generate_synthetic(const GeneratorConfig& cfg) {
    return generate_synthetic_detailed(cfg).dataset;
}

void save_dataset(const MultiDomainDataset& ds, const std::string& stem) {
    std::ofstream main_file(stem + ".csv", std::ios::binary);
    if (!main_file) throw DataError("save_dataset: cannot open " + stem + ".csv for writing");

    std::string line = "domain_id,split,label";
    for (int j = 0; j < ds.input_dim; ++j) line += ",f" + std::to_string(j);
    line += "\n";
    main_file << line;

    for (const DomainSample& s : ds.samples) {
        line.clear();
        line += std::to_string(s.domain_id);
        line += ',';
        line += split_name(s, ds.target_domain());
        line += ',';
        line += std::to_string(s.is_labeled ? s.label : kNoLabel);
        for (double v : s.raw) {
            line += ',';
            fmt_double(line, v);
        }
        line += '\n';
        main_file << line;
    }
    if (!main_file) throw DataError("save_dataset: write failure on " + stem + ".csv");

    std::ofstream eval_file(stem + ".eval.csv", std::ios::binary);
    if (!eval_file) throw DataError("save_dataset: cannot open " + stem + ".eval.csv for writing");
    eval_file << "sample_index,label\n";
    for (std::size_t i = 0; i < ds.eval_labels.size(); ++i)
        eval_file << i << ',' << ds.eval_labels[i] << '\n';
    if (!eval_file) throw DataError("save_dataset: write failure on " + stem + ".eval.csv");
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

int parse_int(const std::string& text, const std::string& file, std::size_t line_no) {
    try {
        std::size_t used = 0;
        int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError(file + ":" + std::to_string(line_no) + ": expected integer, got '" + text + "'");
    }
}

double parse_double(const std::string& text, const std::string& file, std::size_t line_no) {
    try {
        std::size_t used = 0;
        double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw DataError(file + ":" + std::to_string(line_no) + ": expected number, got '" + text + "'");
    }
}

} // namespace

MultiDomainDataset load_dataset(const std::string& stem) {
    const std::string main_path = stem + ".csv";
    std::ifstream main_file(main_path, std::ios::binary);
    if (!main_file) throw DataError("load_dataset: cannot open " + main_path);

    std::string line;
    if (!std::getline(main_file, line))
        throw DataError(main_path + ":1: missing header");
    std::vector<std::string> header = split_fields(line);
    if (header.size() < 3 || header[0] != "domain_id" || header[1] != "split" || header[2] != "label")
        throw DataError(main_path + ":1: bad header, expected domain_id,split,label,f0,...");
    const int d_in = static_cast<int>(header.size()) - 3;
    for (int j = 0; j < d_in; ++j)
        if (header[static_cast<std::size_t>(j + 3)] != "f" + std::to_string(j))
            throw DataError(main_path + ":1: bad feature column name '" +
                            header[static_cast<std::size_t>(j + 3)] + "'");

    MultiDomainDataset ds;
    ds.input_dim = d_in;

    int max_domain = -1;
    int max_label = -1;
    std::vector<bool> target_rows;
    std::size_t line_no = 1;
    while (std::getline(main_file, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields = split_fields(line);
        if (fields.size() != header.size())
            throw DataError(main_path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        DomainSample s;
        s.domain_id = parse_int(fields[0], main_path, line_no);
        if (s.domain_id < 0)
            throw DataError(main_path + ":" + std::to_string(line_no) + ": negative domain_id");
        const std::string& split = fields[1];
        s.label = parse_int(fields[2], main_path, line_no);
        if (s.label < kNoLabel)
            throw DataError(main_path + ":" + std::to_string(line_no) + ": label below -1");
        if (split == "labeled") {
            if (s.label == kNoLabel)
                throw DataError(main_path + ":" + std::to_string(line_no) + ": labeled row without label");
            s.is_labeled = true;
        } else if (split == "unlabeled" || split == "target") {
            if (s.label != kNoLabel)
                throw DataError(main_path + ":" + std::to_string(line_no) + ": " + split +
                                " row carries a label");
        } else {
            throw DataError(main_path + ":" + std::to_string(line_no) + ": unknown split '" + split + "'");
        }
        s.raw.resize(static_cast<std::size_t>(d_in));
        for (int j = 0; j < d_in; ++j)
            s.raw[static_cast<std::size_t>(j)] = parse_double(fields[static_cast<std::size_t>(j + 3)],
                                                              main_path, line_no);
        max_domain = std::max(max_domain, s.domain_id);
        max_label = std::max(max_label, s.label);
        target_rows.push_back(split == "target");
        ds.samples.push_back(std::move(s));
    }

    if (!ds.samples.empty()) {
        bool any_target = false;
        for (bool t : target_rows) any_target = any_target || t;
        if (!any_target) throw DataError(main_path + ": no target rows");
        ds.n_sources = max_domain;
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            const bool in_target_domain = ds.samples[i].domain_id == max_domain;
            if (in_target_domain != target_rows[i])
                throw DataError(main_path + ": target split must coincide with the highest domain id " +
                                std::to_string(max_domain));
        }
    }

    // Optional eval sidecar.
    const std::string eval_path = stem + ".eval.csv";
    std::ifstream eval_file(eval_path, std::ios::binary);
    if (eval_file) {
        if (!std::getline(eval_file, line)) throw DataError(eval_path + ":1: missing header");
        if (split_fields(line) != std::vector<std::string>{"sample_index", "label"})
            throw DataError(eval_path + ":1: bad header, expected sample_index,label");
        std::size_t eval_line = 1;
        std::vector<int> eval_labels;
        while (std::getline(eval_file, line)) {
            ++eval_line;
            if (line.empty()) continue;
            std::vector<std::string> fields = split_fields(line);
            if (fields.size() != 2)
                throw DataError(eval_path + ":" + std::to_string(eval_line) + ": expected 2 fields");
            const std::size_t index = static_cast<std::size_t>(parse_int(fields[0], eval_path, eval_line));
            if (index != eval_labels.size())
                throw DataError(eval_path + ":" + std::to_string(eval_line) + ": non-sequential sample_index");
            const int label = parse_int(fields[1], eval_path, eval_line);
            if (label < 0)
                throw DataError(eval_path + ":" + std::to_string(eval_line) + ": negative eval label");
            eval_labels.push_back(label);
            max_label = std::max(max_label, label);
        }
        if (eval_labels.size() != ds.samples.size())
            throw DataError(eval_path + ": row count " + std::to_string(eval_labels.size()) +
                            " does not match sample count " + std::to_string(ds.samples.size()));
        ds.eval_labels = std::move(eval_labels);
    }

    ds.n_classes = max_label + 1;
    // Visible labels must fall inside [-1, n_classes).
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].label >= ds.n_classes)
            throw DataError(main_path + ": label " + std::to_string(ds.samples[i].label) +
                            " outside [-1, " + std::to_string(ds.n_classes) + ")");
    // Visible labels must agree with the eval sidecar.
    for (std::size_t i = 0; i < ds.eval_labels.size(); ++i)
        if (ds.samples[i].is_labeled && ds.samples[i].label != ds.eval_labels[i])
            throw DataError(eval_path + ": label mismatch for sample " + std::to_string(i));
    return ds;
}

MultiDomainDataset few_shot_split(const MultiDomainDataset& ds, int shots, std::uint64_t seed) {
    if (shots < 1) throw ConfigError("few_shot_split: shots must be >= 1");
    MultiDomainDataset out = ds;

    for (int dom = 0; dom < ds.n_sources; ++dom) {
        std::map<int, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < out.samples.size(); ++i) {
            const DomainSample& s = out.samples[i];
            if (s.domain_id == dom && s.is_labeled) by_class[s.label].push_back(i);
        }
        Rng rng = Rng(seed).derive(Rng::mix(0x73706c6974ULL, static_cast<std::uint64_t>(dom)));
        for (auto& [label, indices] : by_class) {
            if (static_cast<int>(indices.size()) < shots)
                throw ConfigError("few_shot_split: source " + std::to_string(dom) + " class " +
                                  std::to_string(label) + " has only " + std::to_string(indices.size()) +
                                  " labeled samples, need " + std::to_string(shots));
            rng.shuffle(indices);
            for (std::size_t r = static_cast<std::size_t>(shots); r < indices.size(); ++r) {
                out.samples[indices[r]].is_labeled = false;
                out.samples[indices[r]].label = kNoLabel;
            }
        }
    }
    return out;
}

} // namespace msfan
