#include "esp/registry.hpp"

#include <cctype>
#include <fstream>
#include <iterator>

namespace esp {

namespace {

bool is_fingerprint(const std::string& s) {
  if (s.size() != 64) return false;
  for (char c : s) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

bool valid_ref_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) return false;
  }
  return true;
}

}  // namespace

Json manifest_to_json(const Manifest& m) {
  return Json{{"kind", "manifest"},
              {"schema_version", kSchemaVersion},
              {"dataset", m.dataset},
              {"predictor", m.predictor},
              {"gp", m.gp},
              {"front", m.front}};
}

Manifest manifest_from_json(const Json& j) {
  expect_kind(j, "manifest");
  return Manifest{j.at("dataset").get<std::string>(), j.at("predictor").get<std::string>(),
                  j.value("gp", ""), j.at("front").get<std::string>()};
}

Registry::Registry(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_ / "objects");
  std::filesystem::create_directories(root_ / "refs");
}

std::filesystem::path Registry::object_path(const std::string& fp) const {
  return root_ / "objects" / (fp + ".json");
}

std::string Registry::put(const Json& artifact) {
  if (!artifact.is_object() || !artifact.contains("kind")) {
    throw DataError("artifacts must be JSON objects with a kind");
  }
  const auto text = artifact.dump();
  const auto fp = sha256_hex(text);
  const auto path = object_path(fp);
  if (!std::filesystem::exists(path)) {
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error("cannot write " + tmp);
      out << text;
    }
    std::filesystem::rename(tmp, path);
    std::filesystem::permissions(path, std::filesystem::perms::owner_read |
                                           std::filesystem::perms::group_read |
                                           std::filesystem::perms::others_read);
  }
  set_ref(artifact.at("kind").get<std::string>(), fp);
  return fp;
}

bool Registry::contains(const std::string& fp) const {
  return is_fingerprint(fp) && std::filesystem::exists(object_path(fp));
}

Json Registry::get(const std::string& fp) const {
  if (!contains(fp)) throw NotFoundError("artifact " + fp + " not in registry", fp);
  std::ifstream in(object_path(fp), std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (sha256_hex(text) != fp) throw DataError("artifact " + fp + " is corrupt");
  return Json::parse(text);
}

Json Registry::get(const std::string& fp, std::string_view kind) const {
  auto j = get(fp);
  expect_kind(j, kind);
  return j;
}

std::optional<std::string> Registry::ref(const std::string& name) const {
  if (!valid_ref_name(name)) return std::nullopt;
  std::ifstream in(root_ / "refs" / name);
  std::string fp;
  if (!(in >> fp)) return std::nullopt;
  return fp;
}

void Registry::set_ref(const std::string& name, const std::string& fp) {
  if (!valid_ref_name(name)) throw ConfigError("invalid ref name '" + name + "'");
  if (!contains(fp)) throw NotFoundError("artifact " + fp + " not in registry", fp);
  const auto path = root_ / "refs" / name;
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << fp << '\n';
  }
  std::filesystem::rename(tmp, path);
}

std::string Registry::require_ref(const std::string& name) const {
  auto fp = ref(name);
  if (!fp) throw NotFoundError("no " + name + " artifact in registry", name);
  if (!contains(*fp)) throw NotFoundError("artifact " + *fp + " not in registry", *fp);
  return *fp;
}

std::string Registry::publish(const Manifest& m) {
  get(m.dataset, "dataset");
  get(m.predictor, "predictor");
  if (!m.gp.empty()) get(m.gp, "gp");
  get(m.front, "evolution");
  const auto fp = put(manifest_to_json(m));
  set_ref("published", fp);
  return fp;
}

Manifest Registry::published(std::string* fingerprint) const {
  const auto fp = require_ref("published");
  if (fingerprint) *fingerprint = fp;
  return manifest_from_json(get(fp, "manifest"));
}

}  // namespace esp
