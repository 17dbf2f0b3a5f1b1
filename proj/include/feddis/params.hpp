#pragma once

#include "feddis/autograd.hpp"
#include "feddis/random.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace feddis {

/// Where a tensor lives in the federation.
///   shared    - uploaded and fused by the server
///   bank      - the global pattern bank, uploaded and pattern-shared
///   personal  - never leaves the client (learned by gradient)
///   prototype - graph-prototype attention weights, never leave the client
///   state     - client-local non-gradient state (personalized bank)
enum class Role { shared, bank, personal, prototype, state };

const char* role_name(Role role);
Role parse_role(const std::string& name);

/// Ordered collection of named tensors. Iteration order is the lexical order
/// of names, which keeps every traversal deterministic.
class ParamStore {
 public:
  struct Entry {
    Parameter param;
    Role role = Role::personal;
    bool trainable = true;
  };

  Parameter& add(const std::string& name, Matrix init, Role role, bool trainable = true);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  Role role(const std::string& name) const;
  bool trainable(const std::string& name) const;

  std::vector<std::string> names() const;
  std::vector<std::string> names_with_role(Role role) const;
  /// Trainable parameters whose name starts with one of the prefixes (all if empty).
  std::vector<std::pair<std::string, Parameter*>> trainable_params(const std::vector<std::string>& prefixes = {});

  void zero_grad();
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
};

namespace init {

Matrix xavier_uniform(Index rows, Index cols, Rng& rng);
Matrix kaiming_normal(Index rows, Index cols, Rng& rng);
Matrix standard_normal(Index rows, Index cols, Rng& rng);

}  // namespace init
}  // namespace feddis
