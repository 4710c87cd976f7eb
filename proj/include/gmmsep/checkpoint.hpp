#ifndef GMMSEP_CHECKPOINT_HPP
#define GMMSEP_CHECKPOINT_HPP

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

#include "gmmsep/common.hpp"

namespace gmmsep {

// Self-describing container: magic "GMMSEPC1", a JSON header with the config
// and an array table, then the named float64 arrays row-major little-endian.
struct Checkpoint {
    nlohmann::ordered_json header;
    std::vector<std::pair<std::string, MatrixXd>> arrays;

    void set(const std::string& name, const MatrixXd& value);
    bool has(const std::string& name) const;
    const MatrixXd& array(const std::string& name) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace gmmsep

#endif
