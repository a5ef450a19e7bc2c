#include "msfan/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "msfan/error.hpp"

namespace msfan {

namespace {

void write_values(std::ofstream& out, const std::string& name, std::span<const double> values) {
    out << name;
    char buf[32];
    for (double v : values) {
        std::snprintf(buf, sizeof(buf), " %.17g", v);
        out << buf;
    }
    out << '\n';
}

std::vector<double> read_values(std::istringstream& line, const std::string& name, std::size_t count,
                                const std::string& path) {
    std::string token;
    line >> token;
    if (token != name) throw DataError(path + ": expected section '" + name + "', got '" + token + "'");
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i)
        if (!(line >> values[i])) throw DataError(path + ": truncated values for '" + name + "'");
    double extra;
    if (line >> extra) throw DataError(path + ": too many values for '" + name + "'");
    return values;
}

std::string next_line(std::ifstream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": unexpected end of checkpoint");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

} // namespace

void save_checkpoint(const ModelState& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");

    out << "MSFAN-CHECKPOINT v1\n";
    const std::string cfg = serialize_config(model.config);
    std::size_t cfg_lines = 0;
    for (char ch : cfg) cfg_lines += ch == '\n' ? 1 : 0;
    out << "config " << cfg_lines << '\n' << cfg;

    const FeatureExtractor& net = model.extractor;
    out << "extractor " << net.input_dim << ' ' << net.hidden_dim << ' ' << net.feature_dim << '\n';
    write_values(out, "w1", net.w1.data);
    write_values(out, "b1", net.b1);
    write_values(out, "w2", net.w2.data);
    write_values(out, "b2", net.b2);

    out << "classifiers " << model.classifiers.size() << ' '
        << (model.classifiers.empty() ? 0 : model.classifiers[0].weights.cols) << '\n';
    char buf[32];
    for (std::size_t i = 0; i < model.classifiers.size(); ++i) {
        const CosineClassifier& clf = model.classifiers[i];
        std::snprintf(buf, sizeof(buf), "%.17g", clf.temperature);
        out << "classifier " << i << " temperature " << buf << '\n';
        write_values(out, "w", clf.weights.data);
    }
    out << "end\n";
    if (!out) throw DataError("checkpoint: write failure on '" + path + "'");
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");

    if (next_line(in, path) != "MSFAN-CHECKPOINT v1")
        throw DataError(path + ": not a MSFAN-CHECKPOINT v1 file");

    std::istringstream header(next_line(in, path));
    std::string token;
    std::size_t cfg_lines = 0;
    header >> token >> cfg_lines;
    if (token != "config") throw DataError(path + ": expected config section");
    std::string cfg_text;
    for (std::size_t i = 0; i < cfg_lines; ++i) cfg_text += next_line(in, path) + "\n";

    ModelState model;
    model.config = parse_config_text(cfg_text);

    std::istringstream net_header(next_line(in, path));
    std::size_t d_in = 0, h = 0, d = 0;
    net_header >> token >> d_in >> h >> d;
    if (token != "extractor" || d_in == 0 || h == 0 || d == 0)
        throw DataError(path + ": bad extractor header");
    model.extractor = FeatureExtractor(d_in, h, d);
    {
        std::istringstream line(next_line(in, path));
        model.extractor.w1.data = read_values(line, "w1", h * d_in, path);
    }
    {
        std::istringstream line(next_line(in, path));
        model.extractor.b1 = read_values(line, "b1", h, path);
    }
    {
        std::istringstream line(next_line(in, path));
        model.extractor.w2.data = read_values(line, "w2", d * h, path);
    }
    {
        std::istringstream line(next_line(in, path));
        model.extractor.b2 = read_values(line, "b2", d, path);
    }

    std::istringstream clf_header(next_line(in, path));
    std::size_t count = 0, n_classes = 0;
    clf_header >> token >> count >> n_classes;
    if (token != "classifiers") throw DataError(path + ": expected classifiers section");
    for (std::size_t i = 0; i < count; ++i) {
        std::istringstream line(next_line(in, path));
        std::size_t index = 0;
        std::string temp_token;
        double temperature = 0.0;
        line >> token >> index >> temp_token >> temperature;
        if (token != "classifier" || index != i || temp_token != "temperature" || !(temperature > 0.0))
            throw DataError(path + ": bad classifier header " + std::to_string(i));
        CosineClassifier clf(d, n_classes, temperature);
        std::istringstream values(next_line(in, path));
        clf.weights.data = read_values(values, "w", d * n_classes, path);
        model.classifiers.push_back(std::move(clf));
    }
    if (next_line(in, path) != "end") throw DataError(path + ": missing end marker");
    return model;
}

} // namespace msfan
