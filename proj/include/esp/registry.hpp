#pragma once

// Content-addressed artifact store. Objects are JSON files named by the
// SHA-256 of their canonical dump and are never rewritten; named refs point
// at the latest object of each kind and at the published manifest.

#include <filesystem>
#include <optional>
#include <string>

#include "esp/serialize.hpp"

namespace esp {

/// The artifact tuple the service reads. `gp` may be empty.
struct Manifest {
  std::string dataset;
  std::string predictor;
  std::string gp;
  std::string front;
};

Json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const Json& j);

class Registry {
 public:
  explicit Registry(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  /// Stores the artifact and returns its fingerprint. Storing identical
  /// content again is a no-op. Updates the ref named after its "kind".
  std::string put(const Json& artifact);
  /// Throws NotFoundError naming the fingerprint.
  Json get(const std::string& fingerprint) const;
  bool contains(const std::string& fingerprint) const;
  /// Like get(), also checking the artifact kind.
  Json get(const std::string& fingerprint, std::string_view kind) const;

  std::optional<std::string> ref(const std::string& name) const;
  void set_ref(const std::string& name, const std::string& fingerprint);
  /// The ref if set, else NotFoundError mentioning the producing step.
  std::string require_ref(const std::string& name) const;

  /// Verifies every referenced artifact exists with the right kind, stores
  /// the manifest and points the "published" ref at it.
  std::string publish(const Manifest& manifest);
  Manifest published(std::string* fingerprint = nullptr) const;

 private:
  std::filesystem::path object_path(const std::string& fingerprint) const;
  std::filesystem::path root_;
};

}  // namespace esp
