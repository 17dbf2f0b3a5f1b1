#include "feddis/params.hpp"

#include <cmath>
#include <stdexcept>

namespace feddis {

const char* role_name(Role role) {
  switch (role) {
    case Role::shared: return "shared";
    case Role::bank: return "bank";
    case Role::personal: return "personal";
    case Role::prototype: return "prototype";
    case Role::state: return "state";
  }
  return "unknown";
}

Role parse_role(const std::string& name) {
  if (name == "shared") return Role::shared;
  if (name == "bank") return Role::bank;
  if (name == "personal") return Role::personal;
  if (name == "prototype") return Role::prototype;
  if (name == "state") return Role::state;
  throw std::invalid_argument("unknown tensor role '" + name + "'");
}

Parameter& ParamStore::add(const std::string& name, Matrix init, Role role, bool trainable) {
  if (contains(name)) throw std::logic_error("duplicate parameter " + name);
  Entry entry;
  entry.param.value = std::move(init);
  entry.role = role;
  entry.trainable = trainable;
  return entries_.emplace(name, std::move(entry)).first->second.param;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second.param;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second.param;
}

Role ParamStore::role(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second.role;
}

bool ParamStore::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second.trainable;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::names_with_role(Role role) const {
  std::vector<std::string> out;
  for (const auto& [name, entry] : entries_) {
    if (entry.role == role) out.push_back(name);
  }
  return out;
}

std::vector<std::pair<std::string, Parameter*>> ParamStore::trainable_params(const std::vector<std::string>& prefixes) {
  std::vector<std::pair<std::string, Parameter*>> out;
  for (auto& [name, entry] : entries_) {
    if (!entry.trainable) continue;
    bool match = prefixes.empty();
    for (const auto& prefix : prefixes) match = match || name.rfind(prefix, 0) == 0;
    if (match) out.emplace_back(name, &entry.param);
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, entry] : entries_) entry.param.grad.resize(0, 0);
}

namespace init {

Matrix xavier_uniform(Index rows, Index cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

Matrix kaiming_normal(Index rows, Index cols, Rng& rng) {
  // fan_in is the column count when rows index output units.
  const double stddev = std::sqrt(2.0 / static_cast<double>(cols));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

Matrix standard_normal(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace init
}  // namespace feddis
