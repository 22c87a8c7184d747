#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "test_util.hpp"
#include "xedit/datagen.hpp"

using namespace xedit;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

DatasetConfig small_config() {
  DatasetConfig c;
  c.seen_ops = {"invert", "hflip", "grayscale"};
  c.unseen_ops = {"darken"};
  c.pairs_per_task = 5;
  c.cap = 12;
  c.height = 8;
  c.width = 8;
  return c;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

}  // namespace

TEST_SUITE("datagen") {
  TEST_CASE("base images: determinism, range, diversity") {
    CHECK(render_base_image(5, 16, 16) == render_base_image(5, 16, 16));
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto img = render_base_image(s, 16, 16);
      for (float v : img.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        CHECK(from_byte(to_byte(v)) == v);
      }
    }
    for (std::uint64_t s = 0; s < 100; ++s) {
      const auto a = render_base_image(2 * s, 16, 16), b = render_base_image(2 * s + 1, 16, 16);
      std::size_t differ = 0;
      for (std::size_t p = 0; p < 256; ++p) {
        bool d = false;
        for (int c = 0; c < 3; ++c) d = d || a.pixels[p * 3 + c] != b.pixels[p * 3 + c];
        differ += d;
      }
      CHECK(differ * 100 >= 256);
    }
    CHECK_THROWS_AS(render_base_image(1, 4, 16), std::invalid_argument);
  }

  TEST_CASE("edit operator properties") {
    const auto img = render_base_image(9, 16, 16);
    CHECK(apply_edit_op("invert", apply_edit_op("invert", img)) == img);
    CHECK(apply_edit_op("identity", img) == img);
    CHECK(apply_edit_op("hflip", apply_edit_op("hflip", img)) == img);
    CHECK(apply_edit_op("vflip", apply_edit_op("vflip", img)) == img);
    const auto g = apply_edit_op("grayscale", img);
    for (std::size_t p = 0; p < 256; ++p) {
      CHECK(g.pixels[p * 3] == g.pixels[p * 3 + 1]);
      CHECK(g.pixels[p * 3] == g.pixels[p * 3 + 2]);
    }
    Image flat(16, 16, from_byte(97));
    for (float v : apply_edit_op("sobel_edges", flat).pixels) CHECK(v == 0.0f);
    for (float v : apply_edit_op("box_blur3", flat).pixels) CHECK(v == from_byte(97));
    for (const auto& op : op_registry()) {
      const auto out = apply_edit_op(op.name, img);
      CHECK(out.same_size(img));
      for (float v : out.pixels) CHECK(from_byte(to_byte(v)) == v);
    }
    CHECK(op_registry().size() == 15);
    CHECK(instruction_vocab() == 16);
    CHECK(op_index("invert") == 0);
    CHECK_THROWS_AS(apply_edit_op("sharpen", img), std::invalid_argument);
  }

  TEST_CASE("instance enumeration") {
    CHECK(enumerate_instances(3, 1000, Permutation::full, 1, 0).size() == 6);
    const auto cyc = enumerate_instances(5, 1000, Permutation::cyclic, 1, 0);
    REQUIRE(cyc.size() == 5);
    for (const auto& [prompt, query] : cyc) CHECK(prompt == (query + 4) % 5);
    const auto capped = enumerate_instances(50, 100, Permutation::full, 1, 0);
    CHECK(capped.size() == 100);
    CHECK(std::set(capped.begin(), capped.end()).size() == 100);
    for (const auto& [p, q] : capped) CHECK(p != q);
    CHECK(enumerate_instances(50, 100, Permutation::full, 1, 0) == capped);
    CHECK(enumerate_instances(50, 100, Permutation::full, 2, 0) != capped);

    // brute force: every ordered pair of distinct indices
    for (std::size_t n = 2; n <= 20; ++n) {
      std::set<std::pair<std::size_t, std::size_t>> all;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i != j) all.insert({i, j});
      for (std::size_t cap : {std::size_t(1), std::size_t(30), std::size_t(2000)}) {
        const auto got = enumerate_instances(n, cap, Permutation::full, 3, n);
        CHECK(got.size() == std::min(all.size(), cap));
        for (const auto& e : got) CHECK(all.count(e) == 1);
      }
    }
  }

  TEST_CASE("plan: default layout and split rules") {
    const DatasetConfig def;
    const auto m = plan_dataset(def);
    std::size_t seen = 0, unseen = 0;
    for (const auto& t : m.tasks) (t.seen ? seen : unseen)++;
    CHECK(seen == 10);
    CHECK(unseen == 2);
    CHECK(m.instances.size() == 12 * std::min<std::size_t>(16 * 15, 64));
    for (const auto& inst : m.instances) {
      const auto& task = m.task(inst.task_id);
      if (!task.seen) {
        CHECK(inst.split == "eval");
      } else if (inst.query_pair >= 14) {
        CHECK(inst.split == "eval");
      } else if (inst.prompt_pair >= 14) {
        CHECK(inst.split == "unused");
      } else {
        CHECK(inst.split == "train");
      }
    }
    auto one = def;
    one.cap = 1;
    CHECK(plan_dataset(one).instances.size() == 12);
    auto bad = def;
    bad.seen_ops.push_back("nope");
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }

  TEST_CASE("build is byte-deterministic, serial or parallel, and round-trips") {
    const auto a = temp_dir("dg_a"), b = temp_dir("dg_b"), c = temp_dir("dg_c");
    auto cfg = small_config();
    const auto ma = build_dataset(cfg, a);
    build_dataset(cfg, b);
    cfg.workers = 3;
    build_dataset(cfg, c);
    const auto ta = tree_bytes(a);
    CHECK(ta == tree_bytes(b));
    CHECK(ta == tree_bytes(c));
    build_dataset(small_config(), a);
    CHECK(tree_bytes(a) == ta);

    const auto loaded = load_manifest(a);
    CHECK(loaded == ma);
    CHECK(load_manifest(a / "manifest.json") == ma);
    CHECK(loaded.instances.size() == ma.count_split("train") + ma.count_split("eval") +
                                         ma.count_split("unused"));

    const auto victim = a / loaded.tasks[1].pairs[2].second;
    fs::remove(victim);
    try {
      load_manifest(a);
      FAIL("expected a dataset error");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find(victim.filename().string()) != std::string::npos);
    }
    CHECK_THROWS_AS(load_manifest(temp_dir("dg_missing")), DatasetError);
  }

  TEST_CASE("shared images: pair k edits the same base image in every task") {
    const auto a = temp_dir("dg_shared"), b = temp_dir("dg_own");
    auto cfg = small_config();
    cfg.shared_images = true;
    const auto m = build_dataset(cfg, a);
    CHECK(m.shared_images);
    CHECK(load_manifest(a) == m);
    for (std::size_t k = 0; k < cfg.pairs_per_task; ++k) {
      const auto first = read_file(a / m.tasks[0].pairs[k].first);
      for (const auto& t : m.tasks) CHECK(read_file(a / t.pairs[k].first) == first);
    }
    cfg.shared_images = false;
    const auto own = build_dataset(cfg, b);
    CHECK_FALSE(own.shared_images);
    CHECK(read_file(b / own.tasks[0].pairs[0].first) != read_file(b / own.tasks[1].pairs[0].first));
  }
}
