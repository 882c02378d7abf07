#include <gtest/gtest.h>

#include "revstore/audit.hpp"
#include "revstore/readpath.hpp"
#include "revstore/reverse_dedup.hpp"
#include "test_support.hpp"

namespace revstore {
namespace {

using testing::Letters;
using testing::TempDir;
using testing::backup_bytes;
using testing::fast_options;
using testing::restore_bytes;
using testing::tiny_params;

using P = BlockPointer;

std::vector<std::uint32_t> refcounts(const Repository& repo, const Fingerprint& seg) {
  std::vector<std::uint32_t> out;
  for (const auto& b : repo.store().meta(seg).blocks) out.push_back(b.refcount);
  return out;
}

std::vector<bool> removed(const Repository& repo, const Fingerprint& seg) {
  std::vector<bool> out;
  for (const auto& b : repo.store().meta(seg).blocks) out.push_back(b.removed);
  return out;
}

Fingerprint seg_fp(Letters& l, const std::vector<std::string>& names) {
  return fingerprint(l.image(names));
}

TEST(BlockIndex, EveryPrevMatchGoesToTheLowestCurrOrdinal) {
  const Fingerprint x = fingerprint(std::vector<std::uint8_t>{1});
  const Fingerprint y = fingerprint(std::vector<std::uint8_t>{2});
  const Fingerprint z = fingerprint(std::vector<std::uint8_t>{3});
  BlockIndex idx;
  idx.add_curr(x, 9);
  idx.add_curr(x, 2);
  idx.add_curr(y, 4);
  idx.add_prev(x, 5);
  idx.add_prev(x, 3);
  idx.add_prev(z, 1);  // no curr counterpart
  EXPECT_EQ(match_blocks(idx), (std::vector<BlockMatch>{{3, 2}, {5, 2}}));
}

// Three versions of one VM, two segments of four blocks each:
//   v1 A B C D  | E F  G H
//   v2 A B C D' | E F' G H
//   v3 A B C D' | E' F'' G H'
class ThreeVersions : public ::testing::Test {
 protected:
  void SetUp() override {
    repo = std::make_unique<Repository>(dir.path(), StoreConfig{tiny_params(), true},
                                        fast_options(threshold));
    images = {l.image({"A", "B", "C", "D", "E", "F", "G", "H"}),
              l.image({"A", "B", "C", "D'", "E", "F'", "G", "H"}),
              l.image({"A", "B", "C", "D'", "E'", "F''", "G", "H'"})};
  }

  double threshold = 0.2;
  TempDir dir;
  Letters l;
  std::unique_ptr<Repository> repo;
  std::vector<std::vector<std::uint8_t>> images;
};

TEST_F(ThreeVersions, PointerTablesAfterEachIngest) {
  backup_bytes(*repo, "vm", images[0]);
  const auto r2 = backup_bytes(*repo, "vm", images[1]);
  EXPECT_EQ(r2.blocks_redirected, 6u);  // A B C E G H
  EXPECT_EQ(repo->catalog().load_pointers("vm", 1),
            (std::vector<P>{P::indirect(2, 0), P::indirect(2, 1), P::indirect(2, 2), P::direct(0, 3),
                            P::indirect(2, 4), P::direct(1, 1), P::indirect(2, 6), P::indirect(2, 7)}));

  const auto r3 = backup_bytes(*repo, "vm", images[2]);
  // The first segment is shared by v2 and v3 and stays out of the index.
  EXPECT_EQ(r3.blocks_redirected, 1u);
  EXPECT_EQ(repo->catalog().load_pointers("vm", 2),
            (std::vector<P>{P::direct(0, 0), P::direct(0, 1), P::direct(0, 2), P::direct(0, 3),
                            P::direct(1, 0), P::direct(1, 1), P::indirect(3, 6), P::direct(1, 3)}));
  for (const auto& p : repo->catalog().load_pointers("vm", 3)) EXPECT_EQ(p.kind, PointerKind::direct);
  // v1 is untouched by the third ingest: it was already rewritten once.
  EXPECT_EQ(repo->catalog().load_pointers("vm", 1)[6], P::indirect(2, 6));
}

TEST_F(ThreeVersions, ChainLengthAndResolution) {
  for (const auto& img : images) backup_bytes(*repo, "vm", img);
  const auto g = resolve_block(*repo, "vm", 1, 6);
  EXPECT_EQ(g.hops, 2u);
  EXPECT_EQ(g.segment, seg_fp(l, {"E'", "F''", "G", "H'"}));
  EXPECT_EQ(g.block, 2u);
  EXPECT_EQ(resolve_block(*repo, "vm", 1, 0).hops, 1u);
  EXPECT_EQ(resolve_block(*repo, "vm", 1, 5).hops, 0u);
  EXPECT_EQ(read_stats(*repo, "vm", 1).max_chain_length, 2u);
  EXPECT_EQ(read_stats(*repo, "vm", 2).max_chain_length, 1u);
  EXPECT_EQ(read_stats(*repo, "vm", 3).max_chain_length, 0u);
  for (std::size_t v = 0; v < images.size(); ++v) EXPECT_EQ(restore_bytes(*repo, "vm", v + 1), images[v]);
}

TEST_F(ThreeVersions, RefcountsAndRemovals) {
  backup_bytes(*repo, "vm", images[0]);
  const auto r2 = backup_bytes(*repo, "vm", images[1]);
  const Fingerprint abcd = seg_fp(l, {"A", "B", "C", "D"});
  const Fingerprint efgh = seg_fp(l, {"E", "F", "G", "H"});
  EXPECT_EQ(refcounts(*repo, abcd), (std::vector<std::uint32_t>{0, 0, 0, 1}));
  EXPECT_EQ(refcounts(*repo, efgh), (std::vector<std::uint32_t>{0, 1, 0, 0}));
  ASSERT_EQ(r2.removals.size(), 2u);
  for (const auto& rm : r2.removals) {
    EXPECT_EQ(rm.blocks_removed, 3u);
    EXPECT_EQ(rm.mechanism, RemovalMechanism::compact);  // 3/4 >= 0.2
  }
  EXPECT_EQ(removed(*repo, abcd), (std::vector<bool>{true, true, true, false}));

  const auto r3 = backup_bytes(*repo, "vm", images[2]);
  ASSERT_EQ(r3.removals.size(), 1u);
  EXPECT_EQ(r3.removals[0].segment, seg_fp(l, {"E", "F'", "G", "H"}));
  EXPECT_EQ(r3.removals[0].mechanism, RemovalMechanism::compact);  // 1/4 >= 0.2
  EXPECT_TRUE(audit(*repo).ok());
}

TEST_F(ThreeVersions, LowRatioVictimsArePunchedAboveTheirRatio) {
  threshold = 0.5;
  repo.reset();
  SetUp();
  for (const auto& img : images) backup_bytes(*repo, "vm", img);
  const auto meta = repo->store().meta(seg_fp(l, {"E", "F'", "G", "H"}));
  EXPECT_TRUE(meta.removal_applied);
  EXPECT_FALSE(meta.compacted);  // 1/4 < 0.5 punches
  EXPECT_TRUE(meta.blocks[2].removed);
  for (std::size_t v = 0; v < images.size(); ++v) EXPECT_EQ(restore_bytes(*repo, "vm", v + 1), images[v]);
}

// Two VMs with the same first image, ingested A1 B1 A2 B2:
//   A1 = B1 = A B C D  | E F  G H
//   A2      = A B C D' | E F' G H
//   B2      = A B C D' | E' F'' G H'
// The old segments are shared across VMs, so a block only loses its last
// reference once both VMs moved past it.
TEST(ReverseDedup, SharedSegmentsAcrossTwoVms) {
  TempDir dir;
  Letters l;
  Repository repo(dir.path(), StoreConfig{tiny_params(), true}, fast_options(0.2));
  const auto base = l.image({"A", "B", "C", "D", "E", "F", "G", "H"});
  const auto a2 = l.image({"A", "B", "C", "D'", "E", "F'", "G", "H"});
  const auto b2 = l.image({"A", "B", "C", "D'", "E'", "F''", "G", "H'"});
  const Fingerprint abcd = seg_fp(l, {"A", "B", "C", "D"});
  const Fingerprint efgh = seg_fp(l, {"E", "F", "G", "H"});
  const Fingerprint abcd2 = seg_fp(l, {"A", "B", "C", "D'"});

  backup_bytes(repo, "vma", base);
  const auto rb1 = backup_bytes(repo, "vmb", base);
  EXPECT_EQ(rb1.segments_placed, 0u);  // pure global dedup
  EXPECT_EQ(refcounts(repo, abcd), (std::vector<std::uint32_t>{2, 2, 2, 2}));

  const auto ra2 = backup_bytes(repo, "vma", a2);
  EXPECT_TRUE(ra2.removals.empty());
  EXPECT_EQ(refcounts(repo, abcd), (std::vector<std::uint32_t>{1, 1, 1, 2}));
  EXPECT_EQ(refcounts(repo, efgh), (std::vector<std::uint32_t>{1, 2, 1, 1}));

  const auto rb2 = backup_bytes(repo, "vmb", b2);
  EXPECT_EQ(refcounts(repo, abcd), (std::vector<std::uint32_t>{0, 0, 0, 2}));
  EXPECT_EQ(refcounts(repo, efgh), (std::vector<std::uint32_t>{1, 2, 0, 1}));
  EXPECT_EQ(refcounts(repo, abcd2), (std::vector<std::uint32_t>{2, 2, 2, 2}));
  EXPECT_EQ(removed(repo, abcd), (std::vector<bool>{true, true, true, false}));
  EXPECT_EQ(removed(repo, efgh), (std::vector<bool>{false, false, true, false}));
  EXPECT_EQ(rb2.removals.size(), 2u);

  EXPECT_EQ(restore_bytes(repo, "vma", 1), base);
  EXPECT_EQ(restore_bytes(repo, "vmb", 1), base);
  EXPECT_EQ(restore_bytes(repo, "vma", 2), a2);
  EXPECT_EQ(restore_bytes(repo, "vmb", 2), b2);
  EXPECT_TRUE(audit(repo).ok());
}

TEST(ReverseDedup, DuplicateBlocksInsideOneVersion) {
  TempDir dir;
  Letters l;
  Repository repo(dir.path(), StoreConfig{tiny_params(), true}, fast_options(0.2));
  const auto v1 = l.image({"X", "Y", "X", "Z", "X", "Q", "0", "R"});
  const auto v2 = l.image({"K", "X", "0", "L", "M", "N", "X", "P"});
  backup_bytes(repo, "vm", v1);
  const auto r = backup_bytes(repo, "vm", v2);
  EXPECT_EQ(r.blocks_redirected, 3u);
  const auto ptrs = repo.catalog().load_pointers("vm", 1);
  for (std::uint64_t o : {0u, 2u, 4u}) EXPECT_EQ(ptrs[o], P::indirect(2, 1));
  EXPECT_EQ(ptrs[6], P::null());
  EXPECT_EQ(restore_bytes(repo, "vm", 1), v1);
  EXPECT_EQ(restore_bytes(repo, "vm", 2), v2);
  EXPECT_TRUE(audit(repo).ok());
}

TEST(ReverseDedup, DisabledStoreKeepsEveryBlock) {
  TempDir dir;
  Letters l;
  Repository repo(dir.path(), StoreConfig{tiny_params(), false}, fast_options(0.2));
  const auto v1 = l.image({"A", "B", "C", "D", "E", "F", "G", "H"});
  const auto v2 = l.image({"A", "B", "C", "D'", "E", "F'", "G", "H"});
  backup_bytes(repo, "vm", v1);
  const auto r = backup_bytes(repo, "vm", v2);
  EXPECT_EQ(r.blocks_redirected, 0u);
  EXPECT_TRUE(r.removals.empty());
  EXPECT_EQ(repo.catalog().load("vm", 1).indirect_count(), 0u);
  EXPECT_EQ(refcounts(repo, seg_fp(l, {"A", "B", "C", "D"})), (std::vector<std::uint32_t>{1, 1, 1, 1}));
}

TEST(ReverseDedup, RejectsNonAdjacentVersions) {
  TempDir dir;
  Letters l;
  Repository repo(dir.path(), StoreConfig{tiny_params(), true}, fast_options(0.2));
  backup_bytes(repo, "vm", l.image({"A", "B", "C", "D"}));
  VersionRecipe prev = repo.catalog().load("vm", 1);
  VersionRecipe curr = prev;
  curr.version_no = 3;
  EXPECT_THROW(reverse_deduplicate(repo.store(), prev, curr), Error);
}

}  // namespace
}  // namespace revstore
