#include "sidforge/catalog.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>

namespace sidforge {
namespace {

constexpr std::array<const char*, 8> kTopLevelNames = {
    "daily-necessities", "apparel", "beauty", "electronics",
    "food-and-beverage", "home-and-garden", "jewelry-and-watches", "sports-and-outdoors"};
constexpr std::array<const char*, 8> kMidLevelNames = {
    "tableware", "storage", "cleaning", "textiles", "accessories", "care", "tools", "gifts"};
constexpr std::array<const char*, 8> kLeafNames = {
    "drinkware", "basin", "organizer", "towel", "stand", "kit", "set", "holder"};

template <std::size_t N>
std::string node_name(const std::array<const char*, N>& table, int local, const std::string& prefix) {
  std::string name = prefix.empty() ? std::string() : prefix + "/";
  if (local < static_cast<int>(N)) return name + table[static_cast<std::size_t>(local)];
  return name + table[static_cast<std::size_t>(local) % N] + "-" + std::to_string(local);
}

void validate_spec(const CatalogSpec& spec) {
  for (int l = 0; l < kCategoryLevels; ++l) {
    if (spec.branching[static_cast<std::size_t>(l)] <= 0) {
      throw ConfigError("catalog", "branching[" + std::to_string(l) + "] must be positive");
    }
  }
  if (spec.visual_dim <= 0 || spec.text_dim <= 0) {
    throw ConfigError("catalog", "feature dims must be positive");
  }
  if (!(spec.noise_std >= 0.0) || !std::isfinite(spec.noise_std)) {
    throw ConfigError("catalog", "noise_std must be finite and >= 0");
  }
  const int leaves = spec.branching[0] * spec.branching[1] * spec.branching[2];
  if (spec.num_items < leaves) {
    throw ConfigError("catalog", "num_items=" + std::to_string(spec.num_items) + " < leaves=" +
                                     std::to_string(leaves));
  }
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0)) {
    throw ConfigError("catalog", "test_fraction must lie in [0, 1)");
  }
}

nlohmann::json to_array(const Vector& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(round_significant9(v(i)));
  return arr;
}

Vector from_array(const nlohmann::json& arr, Eigen::Index expected, const char* field) {
  if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != expected) {
    throw InputError("catalog", std::string("block '") + field + "' has wrong length");
  }
  Vector v(expected);
  for (Eigen::Index i = 0; i < expected; ++i) v(i) = arr[static_cast<std::size_t>(i)].get<double>();
  if (!v.allFinite()) throw InputError("catalog", std::string("block '") + field + "' not finite");
  return v;
}

}  // namespace

int CategoryTree::node_count(int level) const {
  int n = 1;
  for (int l = 0; l <= level; ++l) n *= branching[static_cast<std::size_t>(l)];
  return n;
}

int CategoryTree::parent(int level, int node) const {
  return node / branching[static_cast<std::size_t>(level)];
}

CategoryTree make_category_tree(std::array<int, kCategoryLevels> branching) {
  CategoryTree tree;
  tree.branching = branching;
  for (int c1 = 0; c1 < branching[0]; ++c1) {
    tree.names[0].push_back(node_name(kTopLevelNames, c1, ""));
  }
  for (int c2 = 0; c2 < tree.node_count(1); ++c2) {
    tree.names[1].push_back(node_name(kMidLevelNames, c2 % branching[1],
                                      tree.names[0][static_cast<std::size_t>(c2 / branching[1])]));
  }
  for (int c3 = 0; c3 < tree.node_count(2); ++c3) {
    tree.names[2].push_back(node_name(kLeafNames, c3 % branching[2],
                                      tree.names[1][static_cast<std::size_t>(c3 / branching[2])]));
  }
  return tree;
}

int CatalogSpec::attr_dim() const {
  return branching[0] + branching[0] * branching[1] + branching[0] * branching[1] * branching[2];
}

const Item& ItemCatalog::item(std::int64_t id) const {
  if (id < 0 || id >= static_cast<std::int64_t>(items.size())) {
    throw InputError("catalog", "unknown item id " + std::to_string(id));
  }
  return items[static_cast<std::size_t>(id)];
}

LeafPrototypes leaf_prototypes(const CatalogSpec& spec, const CategoryTree& tree) {
  const int leaves = tree.leaf_count();
  const int groups = spec.ambiguity ? tree.node_count(1) : leaves;
  Rng rng(derive_seed(spec.seed, 1));
  Matrix group_visual(spec.visual_dim, groups);
  Matrix group_text(spec.text_dim, groups);
  for (int g = 0; g < groups; ++g) {
    for (int d = 0; d < spec.visual_dim; ++d) group_visual(d, g) = rng.normal();
    for (int d = 0; d < spec.text_dim; ++d) group_text(d, g) = rng.normal();
  }
  LeafPrototypes protos{Matrix(spec.visual_dim, leaves), Matrix(spec.text_dim, leaves)};
  for (int leaf = 0; leaf < leaves; ++leaf) {
    const int g = spec.ambiguity ? tree.parent(2, leaf) : leaf;
    protos.visual.col(leaf) = group_visual.col(g);
    protos.text.col(leaf) = group_text.col(g);
  }
  return protos;
}

Vector attr_block(const CategoryTree& tree, const CategoryPath& labels) {
  const int n1 = tree.node_count(0);
  const int n2 = tree.node_count(1);
  Vector attr = Vector::Zero(n1 + n2 + tree.node_count(2));
  attr(labels[0]) = 1.0;
  attr(n1 + labels[1]) = 1.0;
  attr(n1 + n2 + labels[2]) = 1.0;
  return attr;
}

ItemCatalog generate_catalog(const CatalogSpec& spec) {
  validate_spec(spec);
  ItemCatalog catalog;
  catalog.spec = spec;
  catalog.tree = make_category_tree(spec.branching);
  const int leaves = catalog.tree.leaf_count();
  const LeafPrototypes protos = leaf_prototypes(spec, catalog.tree);

  Rng noise(derive_seed(spec.seed, 2));
  catalog.items.reserve(static_cast<std::size_t>(spec.num_items));
  for (int i = 0; i < spec.num_items; ++i) {
    Item item;
    item.id = i;
    const int leaf = i % leaves;
    const int c2 = catalog.tree.parent(2, leaf);
    item.labels = {catalog.tree.parent(1, c2), c2, leaf};
    item.visual = protos.visual.col(leaf);
    item.text = protos.text.col(leaf);
    for (int d = 0; d < spec.visual_dim; ++d) item.visual(d) += spec.noise_std * noise.normal();
    for (int d = 0; d < spec.text_dim; ++d) item.text(d) += spec.noise_std * noise.normal();
    item.attr = attr_block(catalog.tree, item.labels);
    catalog.items.push_back(std::move(item));
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(spec.num_items));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  Rng split(derive_seed(spec.seed, 3));
  split.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * spec.num_items));
  catalog.test_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  catalog.train_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(catalog.test_ids.begin(), catalog.test_ids.end());
  std::sort(catalog.train_ids.begin(), catalog.train_ids.end());
  return catalog;
}

Vector item_features(const Item& item) {
  Vector x(item.visual.size() + item.text.size() + item.attr.size());
  x << item.visual, item.text, item.attr;
  return x;
}

Matrix feature_matrix(const ItemCatalog& catalog, std::span<const std::int64_t> ids) {
  Matrix x(catalog.spec.feature_dim(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = item_features(catalog.item(ids[j]));
  return x;
}

GranularPositives build_positive_sets(const ItemCatalog& catalog, std::span<const std::int64_t> batch) {
  GranularPositives out;
  out.batch.assign(batch.begin(), batch.end());
  std::vector<std::int64_t> sorted = out.batch;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw InputError("catalog", "duplicate ids in batch");
  }
  const int n = static_cast<int>(batch.size());
  std::vector<const CategoryPath*> labels;
  labels.reserve(batch.size());
  for (auto id : batch) labels.push_back(&catalog.item(id).labels);
  for (auto& level : out.positives) level.assign(static_cast<std::size_t>(n), {});
  for (int q = 0; q < n; ++q) {
    for (int p = 0; p < n; ++p) {
      if (p == q) continue;
      // Global node ids already encode the path, so agreement at level l implies
      // agreement at every coarser level.
      for (int l = 0; l < kCategoryLevels; ++l) {
        if ((*labels[static_cast<std::size_t>(q)])[static_cast<std::size_t>(l)] !=
            (*labels[static_cast<std::size_t>(p)])[static_cast<std::size_t>(l)]) {
          break;
        }
        out.positives[static_cast<std::size_t>(l)][static_cast<std::size_t>(q)].push_back(p);
      }
    }
  }
  return out;
}

double round_significant9(double value) {
  if (value == 0.0 || !std::isfinite(value)) return value;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return std::strtod(buf, nullptr);
}

nlohmann::json catalog_spec_to_json(const CatalogSpec& spec) {
  return {{"branching", spec.branching},   {"visual_dim", spec.visual_dim},
          {"text_dim", spec.text_dim},     {"noise_std", spec.noise_std},
          {"ambiguity", spec.ambiguity},   {"num_items", spec.num_items},
          {"test_fraction", spec.test_fraction}, {"seed", spec.seed}};
}

CatalogSpec catalog_spec_from_json(const nlohmann::json& doc) {
  CatalogSpec spec;
  spec.branching = doc.at("branching").get<std::array<int, kCategoryLevels>>();
  spec.visual_dim = doc.at("visual_dim").get<int>();
  spec.text_dim = doc.at("text_dim").get<int>();
  spec.noise_std = doc.at("noise_std").get<double>();
  spec.ambiguity = doc.at("ambiguity").get<bool>();
  spec.num_items = doc.at("num_items").get<int>();
  spec.test_fraction = doc.at("test_fraction").get<double>();
  spec.seed = doc.at("seed").get<std::uint64_t>();
  return spec;
}

nlohmann::json catalog_to_json(const ItemCatalog& catalog) {
  nlohmann::json doc;
  doc["spec"] = catalog_spec_to_json(catalog.spec);
  doc["tree"] = {{"branching", catalog.tree.branching}, {"names", catalog.tree.names}};
  auto items = nlohmann::json::array();
  for (const auto& item : catalog.items) {
    items.push_back({{"id", item.id},
                     {"labels", item.labels},
                     {"visual", to_array(item.visual)},
                     {"text", to_array(item.text)},
                     {"attr", to_array(item.attr)}});
  }
  doc["items"] = std::move(items);
  doc["split"] = {{"train", catalog.train_ids}, {"test", catalog.test_ids}};
  return doc;
}

ItemCatalog catalog_from_json(const nlohmann::json& doc) {
  try {
    ItemCatalog catalog;
    catalog.spec = catalog_spec_from_json(doc.at("spec"));
    validate_spec(catalog.spec);
    catalog.tree = make_category_tree(catalog.spec.branching);
    catalog.tree.names = doc.at("tree").at("names").get<std::array<std::vector<std::string>, kCategoryLevels>>();
    for (int l = 0; l < kCategoryLevels; ++l) {
      if (static_cast<int>(catalog.tree.names[static_cast<std::size_t>(l)].size()) != catalog.tree.node_count(l)) {
        throw InputError("catalog", "tree names do not match branching at level " + std::to_string(l + 1));
      }
    }
    const auto& items = doc.at("items");
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& entry = items[i];
      Item item;
      item.id = entry.at("id").get<std::int64_t>();
      if (item.id != static_cast<std::int64_t>(i)) throw InputError("catalog", "item ids must be dense 0..N-1");
      item.labels = entry.at("labels").get<CategoryPath>();
      if (item.labels[2] < 0 || item.labels[2] >= catalog.tree.leaf_count() ||
          catalog.tree.parent(2, item.labels[2]) != item.labels[1] ||
          catalog.tree.parent(1, item.labels[1]) != item.labels[0]) {
        throw InputError("catalog", "labels of item " + std::to_string(item.id) + " inconsistent with tree");
      }
      item.visual = from_array(entry.at("visual"), catalog.spec.visual_dim, "visual");
      item.text = from_array(entry.at("text"), catalog.spec.text_dim, "text");
      item.attr = from_array(entry.at("attr"), catalog.spec.attr_dim(), "attr");
      catalog.items.push_back(std::move(item));
    }
    catalog.train_ids = doc.at("split").at("train").get<std::vector<std::int64_t>>();
    catalog.test_ids = doc.at("split").at("test").get<std::vector<std::int64_t>>();
    return catalog;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("catalog", std::string("malformed catalog document: ") + e.what());
  }
}

}  // namespace sidforge
