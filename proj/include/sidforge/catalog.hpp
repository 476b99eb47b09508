#pragma once

// Synthetic hierarchical ad catalogs and the level-dependent positive sets
// used by the multi-granularity contrastive objective.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "sidforge/numkit.hpp"

namespace sidforge {

inline constexpr int kCategoryLevels = 3;

struct CategoryTree {
  std::array<int, kCategoryLevels> branching{4, 4, 4};
  // names[level][node]; level-l node ids are global within the level.
  std::array<std::vector<std::string>, kCategoryLevels> names;

  int node_count(int level) const;  // level in [0, 3)
  int leaf_count() const { return node_count(kCategoryLevels - 1); }
  int parent(int level, int node) const;  // level >= 1
  bool operator==(const CategoryTree&) const = default;
};

CategoryTree make_category_tree(std::array<int, kCategoryLevels> branching);

// (c1, c2, c3): global node ids per level.
using CategoryPath = std::array<int, kCategoryLevels>;

struct Item {
  std::int64_t id = 0;
  Vector visual;
  Vector text;
  Vector attr;
  CategoryPath labels{};
  std::vector<int> summary;  // filled by the summarizer
};

struct CatalogSpec {
  std::array<int, kCategoryLevels> branching{4, 4, 4};
  int visual_dim = 16;
  int text_dim = 16;
  double noise_std = 0.3;
  bool ambiguity = true;
  int num_items = 2048;
  double test_fraction = 0.1;
  std::uint64_t seed = 7;

  int attr_dim() const;
  int feature_dim() const { return visual_dim + text_dim + attr_dim(); }
  bool operator==(const CatalogSpec&) const = default;
};

struct ItemCatalog {
  CatalogSpec spec;
  CategoryTree tree;
  std::vector<Item> items;
  std::vector<std::int64_t> train_ids;
  std::vector<std::int64_t> test_ids;

  std::uint64_t seed() const { return spec.seed; }
  const Item& item(std::int64_t id) const;
};

// Visual and text prototypes per leaf (columns), regenerated from the spec
// seed. With ambiguity on, siblings under one level-2 node share columns.
struct LeafPrototypes {
  Matrix visual;  // visual_dim x leaves
  Matrix text;    // text_dim x leaves
};

LeafPrototypes leaf_prototypes(const CatalogSpec& spec, const CategoryTree& tree);

ItemCatalog generate_catalog(const CatalogSpec& spec);

Vector attr_block(const CategoryTree& tree, const CategoryPath& labels);

// concat(visual, text, attr)
Vector item_features(const Item& item);
Matrix feature_matrix(const ItemCatalog& catalog, std::span<const std::int64_t> ids);

// positives[level][q] lists batch positions p != q whose labels agree with q
// on levels 1..level+1.
struct GranularPositives {
  std::vector<std::int64_t> batch;
  std::array<std::vector<std::vector<int>>, kCategoryLevels> positives;
};

GranularPositives build_positive_sets(const ItemCatalog& catalog, std::span<const std::int64_t> batch);

nlohmann::json catalog_to_json(const ItemCatalog& catalog);
ItemCatalog catalog_from_json(const nlohmann::json& doc);
nlohmann::json catalog_spec_to_json(const CatalogSpec& spec);
CatalogSpec catalog_spec_from_json(const nlohmann::json& doc);

// Rounds to 9 significant decimal digits, the precision catalogs persist at.
double round_significant9(double value);

}  // namespace sidforge
