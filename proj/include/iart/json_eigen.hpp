#ifndef IART_JSON_EIGEN_HPP
#define IART_JSON_EIGEN_HPP

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "json.hpp"

namespace iart {

inline nlohmann::json vec_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

inline Eigen::Vector3d vec3_from_json(const nlohmann::json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument(field + ": expected an array of 3 numbers");
    Eigen::Vector3d v;
    for (int i = 0; i < 3; ++i) {
        if (!j[i].is_number()) throw std::invalid_argument(field + ": expected an array of 3 numbers");
        v[i] = j[i].get<double>();
    }
    return v;
}

inline Eigen::VectorXd vecx_from_json(const nlohmann::json& j, const std::string& field) {
    if (!j.is_array()) throw std::invalid_argument(field + ": expected an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

}  // namespace iart

#endif  // IART_JSON_EIGEN_HPP
