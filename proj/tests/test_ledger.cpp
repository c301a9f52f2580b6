#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sentinel/ledger.hpp"
#include "sentinel/rng.hpp"

using namespace sentinel;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("sentinel_test_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<double> random_gradient(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> g(d);
  for (auto& v : g) v = rng.gaussian();
  return g;
}

}  // namespace

TEST_CASE("sha256 known answer vectors") {
  CHECK(hash_hex(sha256(nullptr, 0)) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const std::string abc = "abc";
  CHECK(hash_hex(sha256(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size())) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  // 56 bytes forces the two-block padding path.
  const std::string msg = "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq";
  CHECK(hash_hex(sha256(reinterpret_cast<const std::uint8_t*>(msg.data()), msg.size())) ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("commitment verifies and any bit flip breaks it") {
  auto g = random_gradient(64, 101);
  auto bytes = canonical_update_bytes(3, 7, g);
  Hash32 h = commit_hash(bytes);
  CHECK(verify_commitment(bytes, h));

  Rng rng(102);
  for (int trial = 0; trial < 1000; ++trial) {
    auto corrupted = bytes;
    const std::size_t byte = rng.uniform_int(corrupted.size() - 1);
    const int bit = static_cast<int>(rng.uniform_int(7));
    corrupted[byte] ^= static_cast<std::uint8_t>(1u << bit);
    CHECK_FALSE(verify_commitment(corrupted, h));
  }
}

TEST_CASE("canonical bytes are sensitive to round and client ids") {
  auto g = random_gradient(8, 103);
  CHECK(canonical_update_bytes(1, 2, g) != canonical_update_bytes(2, 2, g));
  CHECK(canonical_update_bytes(1, 2, g) != canonical_update_bytes(1, 3, g));
  CHECK(canonical_update_bytes(1, 2, g).size() == 3 * 8 + 8 * 8);
}

TEST_CASE("gzip round trip and ratio on structured gradients") {
  // Sparse-ish gradient: ~70% exact zeros, like a masked model update.
  Rng rng(104);
  std::vector<double> g(1000000);
  for (auto& v : g) v = (rng.uniform() < 0.7) ? 0.0 : rng.gaussian();
  auto bytes = canonical_update_bytes(0, 0, g);
  auto z = gzip_compress(bytes);
  CHECK(gzip_decompress(z) == bytes);
  const double ratio = static_cast<double>(z.size()) / static_cast<double>(bytes.size());
  CHECK(ratio >= 0.2);
  CHECK(ratio <= 0.8);
  CHECK_THROWS_AS(gzip_decompress({0x00, 0x01, 0x02}), Error);
}

TEST_CASE("round lifecycle happy path") {
  Ledger led(fresh_dir("lifecycle"));
  led.register_client("client-a", 0);
  led.register_client("client-b", 1);
  CHECK(led.lookup_client("client-a") == 0);
  CHECK_FALSE(led.lookup_client("ghost").has_value());

  const std::uint64_t r = led.start_round();
  CHECK(led.current_round() == r);
  auto ga = random_gradient(16, 105);
  auto ba = canonical_update_bytes(r, 0, ga);
  led.submit_update(0, commit_hash(ba));
  led.store_blob(r, 0, ba);
  CHECK(led.has_submitted(r, 0));
  CHECK_FALSE(led.has_submitted(r, 1));
  CHECK(led.get_update_hash(r, 0) == commit_hash(ba));

  led.finalize_round(commit_hash(ba));
  CHECK_FALSE(led.current_round().has_value());
  RoundRecord rec = led.get_round_info(r);
  CHECK(rec.status == RoundStatus::Finalized);
  CHECK(rec.aggregate_hash.has_value());
  CHECK(led.load_blob(r, 0) == ba);
}

TEST_CASE("lifecycle violations raise typed errors") {
  Ledger led(fresh_dir("violations"));
  led.register_client("a", 0);
  CHECK_THROWS_AS(led.submit_update(0, Hash32{}), Error);  // no open round
  led.start_round();
  CHECK_THROWS_AS(led.start_round(), Error);  // round already open
  CHECK_THROWS_AS(led.submit_update(9, Hash32{}), Error);  // unregistered
  led.submit_update(0, Hash32{});
  try {
    led.submit_update(0, Hash32{});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DuplicateSubmission);
  }
  led.finalize_round(Hash32{});
  try {
    led.finalize_round(Hash32{});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoOpenRound);
  }
  CHECK_THROWS_AS(led.register_client("b", 0), Error);  // id reuse
}

TEST_CASE("batch registration is atomic and logs a single event") {
  Ledger led(fresh_dir("batch"));
  led.register_client("solo", 99);
  const std::uint64_t before = led.event_count();
  std::vector<std::string> addrs(100);
  std::vector<std::uint64_t> ids(100);
  for (int i = 0; i < 100; ++i) {
    addrs[static_cast<std::size_t>(i)] = "c" + std::to_string(i);
    ids[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(100 + i);
  }
  led.register_batch(addrs, ids);
  CHECK(led.event_count() == before + 1);
  CHECK(led.lookup_client("c42") == 142);

  // A batch containing one conflicting id must change nothing.
  std::vector<std::string> bad_addrs = {"x0", "x1"};
  std::vector<std::uint64_t> bad_ids = {300, 99};
  CHECK_THROWS_AS(led.register_batch(bad_addrs, bad_ids), Error);
  CHECK_FALSE(led.lookup_client("x0").has_value());
}

TEST_CASE("tampered blob fails integrity check on load") {
  fs::path root = fresh_dir("tamper");
  Ledger led(root);
  led.register_client("a", 0);
  const std::uint64_t r = led.start_round();
  auto g = random_gradient(32, 106);
  auto bytes = canonical_update_bytes(r, 0, g);
  led.submit_update(0, commit_hash(bytes));
  fs::path blob = led.store_blob(r, 0, bytes);
  led.finalize_round(commit_hash(bytes));

  // Flip one byte in the middle of the stored (compressed) file.
  std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(0, std::ios::end);
  const auto sz = static_cast<long>(f.tellg());
  f.seekp(sz / 2);
  char c;
  f.seekg(sz / 2);
  f.get(c);
  f.seekp(sz / 2);
  f.put(static_cast<char>(c ^ 0x10));
  f.close();
  try {
    led.load_blob(r, 0);
    CHECK(false);
  } catch (const Error& e) {
    // Either the gzip stream or the hash check catches it.
    CHECK((e.code() == ErrorCode::IntegrityError || e.code() == ErrorCode::InvalidInput));
  }
}

TEST_CASE("retention purges old blobs but keeps hashes queryable") {
  Ledger::Options opt;
  opt.keep_rounds = 2;
  Ledger led(fresh_dir("retention"), opt);
  led.register_client("a", 0);
  std::vector<Hash32> hashes;
  for (int r = 0; r < 5; ++r) {
    const std::uint64_t id = led.start_round();
    auto g = random_gradient(8, 200 + static_cast<std::uint64_t>(r));
    auto bytes = canonical_update_bytes(id, 0, g);
    led.submit_update(0, commit_hash(bytes));
    led.store_blob(id, 0, bytes);
    hashes.push_back(commit_hash(bytes));
    led.finalize_round(commit_hash(bytes));
    led.advance_tick();
  }
  // Rounds 0..2 purged; 3 and 4 retained.
  CHECK(led.get_round_info(0).purged);
  CHECK_FALSE(led.get_round_info(4).purged);
  try {
    led.load_blob(0, 0);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PurgedError);
  }
  CHECK(led.get_update_hash(0, 0) == hashes[0]);  // hash survives the purge
  CHECK(led.load_blob(4, 0) == canonical_update_bytes(4, 0, random_gradient(8, 204)));
}

TEST_CASE("replay from the event log reproduces the state digest") {
  fs::path root = fresh_dir("replay");
  std::string digest;
  {
    Ledger led(root);
    led.register_client("a", 0);
    led.register_client("b", 1);
    for (int r = 0; r < 3; ++r) {
      const std::uint64_t id = led.start_round();
      for (std::uint64_t c = 0; c < 2; ++c) {
        auto bytes = canonical_update_bytes(id, c, random_gradient(4, 300 + c));
        led.submit_update(c, commit_hash(bytes));
      }
      led.advance_tick(3);
      led.finalize_round(sha256(nullptr, 0));
    }
    digest = led.state_digest();
  }
  auto replayed = Ledger::replay(root);
  REQUIRE(replayed);
  CHECK(replayed->state_digest() == digest);
  CHECK(replayed->get_round_info(2).status == RoundStatus::Finalized);
  CHECK(replayed->lookup_client("b") == 1);
}

TEST_CASE("ticks are monotone and stamped onto rounds") {
  Ledger led(fresh_dir("ticks"));
  led.register_client("a", 0);
  led.advance_tick(5);
  const std::uint64_t r = led.start_round();
  led.advance_tick(2);
  led.finalize_round(Hash32{});
  RoundRecord rec = led.get_round_info(r);
  CHECK(rec.start_tick == 5);
  CHECK(rec.end_tick == 7);
  CHECK(led.tick() == 7);
}
