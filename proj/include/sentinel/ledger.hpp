#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sentinel/error.hpp"
#include "sentinel/sha256.hpp"

namespace sentinel {

enum class RoundStatus { Open, Finalized };

struct RoundRecord {
  std::uint64_t id = 0;
  std::uint64_t start_tick = 0;
  std::uint64_t end_tick = 0;  // valid when Finalized
  std::map<std::uint64_t, Hash32> submissions;  // client id -> update hash
  std::optional<Hash32> aggregate_hash;
  RoundStatus status = RoundStatus::Open;
  bool purged = false;  // blobs deleted by retention; hashes stay queryable
};

// Canonical update serialization: (round, client, d) as little-endian u64,
// then the gradient as little-endian f64.  Hashes are always taken over
// these uncompressed bytes so compression settings never change identity.
std::vector<std::uint8_t> canonical_update_bytes(std::uint64_t round, std::uint64_t client,
                                                 const std::vector<double>& gradient);

Hash32 commit_hash(const std::vector<std::uint8_t>& bytes);
bool verify_commitment(const std::vector<std::uint8_t>& bytes, const Hash32& hash);

std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& bytes, int level = 6);
std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& bytes);

// In-process mirror of the on-chain round lifecycle plus a filesystem blob
// store (rounds/<round>/<client>.grad[.gz]) and a JSON-lines event log.
// Single-writer: every mutation is serialized behind one mutex.
class Ledger {
 public:
  struct Options {
    int keep_rounds = -1;  // retention: purge blobs of rounds older than this many (-1 = keep all)
    bool compress_blobs = true;
    bool log_events = true;
  };

  explicit Ledger(std::filesystem::path root) : Ledger(std::move(root), Options{}) {}
  Ledger(std::filesystem::path root, Options opt);

  void register_client(const std::string& addr, std::uint64_t id);
  void register_batch(const std::vector<std::string>& addrs,
                      const std::vector<std::uint64_t>& ids);
  std::optional<std::uint64_t> lookup_client(const std::string& addr) const;

  std::uint64_t start_round();
  void submit_update(std::uint64_t client, const Hash32& hash);
  void finalize_round(const Hash32& aggregate_hash);

  RoundRecord get_round_info(std::uint64_t id) const;
  bool has_submitted(std::uint64_t id, std::uint64_t client) const;
  Hash32 get_update_hash(std::uint64_t id, std::uint64_t client) const;
  std::optional<std::uint64_t> current_round() const;

  // Off-chain blob store keyed by (round, client).  load verifies against the
  // submitted hash and throws IntegrityError on mismatch, PurgedError after
  // retention removed the round's blobs.
  std::filesystem::path store_blob(std::uint64_t round, std::uint64_t client,
                                   const std::vector<std::uint8_t>& bytes);
  std::vector<std::uint8_t> load_blob(std::uint64_t round, std::uint64_t client) const;

  void advance_tick(std::uint64_t ticks = 1);
  std::uint64_t tick() const;
  std::uint64_t event_count() const;

  const std::filesystem::path& root() const { return root_; }

  // Rebuilds ledger state purely from an existing event log (blobs and the
  // log itself are left untouched).
  static std::unique_ptr<Ledger> replay(const std::filesystem::path& root);

  // Order-insensitive digest of registry + rounds, for replay comparison.
  std::string state_digest() const;

 private:
  void log_event(const std::string& op, const std::string& args_json);
  void apply_retention();
  const RoundRecord& round_ref(std::uint64_t id) const;

  std::filesystem::path root_;
  Options opt_;
  std::map<std::string, std::uint64_t> clients_;
  std::vector<RoundRecord> rounds_;
  std::optional<std::uint64_t> current_;
  std::uint64_t tick_ = 0;
  std::uint64_t seq_ = 0;
  mutable std::mutex mu_;
  bool replaying_ = false;
};

}  // namespace sentinel
