#include "gmmsep/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace gmmsep {

namespace {
constexpr char kMagic[8] = {'G', 'M', 'M', 'S', 'E', 'P', 'C', '1'};
}

void Checkpoint::set(const std::string& name, const MatrixXd& value) {
    for (auto& [n, v] : arrays) {
        if (n == name) {
            v = value;
            return;
        }
    }
    arrays.emplace_back(name, value);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, v] : arrays)
        if (n == name) return true;
    return false;
}

const MatrixXd& Checkpoint::array(const std::string& name) const {
    for (const auto& [n, v] : arrays)
        if (n == name) return v;
    throw std::runtime_error("checkpoint: missing array '" + name + "'");
}

void Checkpoint::save(const std::string& path) const {
    nlohmann::ordered_json full = header;
    full["arrays"] = nlohmann::ordered_json::array();
    for (const auto& [name, mat] : arrays) {
        nlohmann::ordered_json entry;
        entry["name"] = name;
        entry["rows"] = mat.rows();
        entry["cols"] = mat.cols();
        full["arrays"].push_back(entry);
    }
    const std::string hdr = full.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "checkpoint: cannot write " + path);
    out.write(kMagic, 8);
    const uint32_t hlen = static_cast<uint32_t>(hdr.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    for (const auto& [name, mat] : arrays) {
        for (Eigen::Index r = 0; r < mat.rows(); ++r)
            for (Eigen::Index c = 0; c < mat.cols(); ++c) {
                const double v = mat(r, c);
                out.write(reinterpret_cast<const char*>(&v), 8);
            }
    }
    require(out.good(), "checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "checkpoint: cannot open " + path);

    char magic[8];
    in.read(magic, 8);
    require(in.good() && std::memcmp(magic, kMagic, 8) == 0,
            "checkpoint: bad or corrupt file " + path);
    uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 4);
    require(in.good(), "checkpoint: truncated header in " + path);
    std::string hdr(hlen, '\0');
    in.read(hdr.data(), hlen);
    require(in.good(), "checkpoint: truncated header in " + path);

    Checkpoint ck;
    ck.header = nlohmann::ordered_json::parse(hdr);
    for (const auto& entry : ck.header.at("arrays")) {
        const std::string name = entry.at("name").get<std::string>();
        const Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
        const Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
        MatrixXd mat(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) {
                double v;
                in.read(reinterpret_cast<char*>(&v), 8);
                mat(r, c) = v;
            }
        require(in.good(), "checkpoint: truncated array data in " + path);
        ck.arrays.emplace_back(name, std::move(mat));
    }
    ck.header.erase("arrays");
    return ck;
}

}  // namespace gmmsep
