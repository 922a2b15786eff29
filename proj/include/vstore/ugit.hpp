#pragma once

// Git-like version control built on the store's two primitives: content
// writes and version fetches.
//
// Object model: one key per object family under a repository prefix —
// blobs (file contents), trees (directories), commits, tags. Blobs, trees,
// and tags are written with parent ROOT, so their versions are pure content
// addresses: the version is computable before writing, letting a commit probe
// for existing objects and skip re-uploading unchanged content. Commits use
// real parent links instead; the commit history is the store's version DAG
// for the commit key, so `log` is a predecessor scan and a merge commit is a
// store-level merge with both commits as parents.
//
// Trees encode their entries sorted by name, each entry carrying a kind
// octet (blob or subtree) plus the child's version; checkout walks exactly
// the objects reachable from one commit and never touches history.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "client.hpp"
#include "common.hpp"
#include "record.hpp"
#include "version.hpp"

namespace vstore {

class UGit {
 public:
  enum class EntryKind : std::uint8_t { kBlob = 0, kTree = 1 };

  struct TreeEntry {
    std::string name;
    EntryKind kind = EntryKind::kBlob;
    VersionId version;
  };

  struct CommitInfo {
    VersionId version;
    std::vector<VersionId> parents;
    std::string message;
    std::string author;
    std::uint64_t timestamp = 0;
    VersionId tree;
  };

  struct MergeOutcome {
    VersionId commit;                    // set when conflicts is empty
    std::vector<std::string> conflicts;  // paths changed on both sides
    bool merged() const { return conflicts.empty(); }
  };

  UGit(ClientSession& session, std::string repo)
      : session_(session),
        blob_key_(repo + "/blob"),
        tree_key_(repo + "/tree"),
        commit_key_(repo + "/commit"),
        tag_key_(repo + "/tag") {}

  const std::string& blob_key() const { return blob_key_; }
  const std::string& tree_key() const { return tree_key_; }
  const std::string& commit_key() const { return commit_key_; }
  const std::string& tag_key() const { return tag_key_; }

  // Snapshot a directory: blobs and trees bottom-up (skipping objects that
  // already exist), then one commit record chained onto parent.
  Result<VersionId> commit_dir(const std::filesystem::path& workdir,
                               const std::string& message, const std::string& author,
                               std::uint64_t timestamp,
                               const VersionId& parent = root_version()) {
    std::error_code ec;
    if (!std::filesystem::is_directory(workdir, ec))
      return {ErrorCode::kIOFailure, "not a readable directory: " + workdir.string()};
    auto tree = write_tree(workdir);
    if (!tree) return tree;
    std::string body;
    put_lp(body, message);
    put_lp(body, author);
    put_u64be(body, timestamp);
    encode_version(body, *tree);
    return session_.put(commit_key_, parent, body);
  }

  // Materialize one commit into an empty directory; returns the file count.
  Result<std::size_t> checkout(const VersionId& commit,
                               const std::filesystem::path& dest) {
    if (commit.is_root())
      return {ErrorCode::kBadRequest, "cannot check out the root version"};
    std::error_code ec;
    if (std::filesystem::exists(dest, ec)) {
      if (!std::filesystem::is_directory(dest, ec) ||
          !std::filesystem::is_empty(dest, ec))
        return {ErrorCode::kBadRequest, "destination is not empty: " + dest.string()};
    } else {
      std::filesystem::create_directories(dest, ec);
      if (ec) return {ErrorCode::kIOFailure, "cannot create " + dest.string()};
    }
    auto info = read_commit(commit);
    if (!info) return {info.code(), info.message()};
    std::unordered_map<Digest, Bytes, DigestHash> blob_cache;
    std::size_t files = 0;
    auto res = materialize_tree(info->tree, dest, blob_cache, files);
    if (!res) return {res.code(), res.message()};
    return files;
  }

  // Commit history from `from` backwards (inclusive), up to `limit` entries.
  // Each batch is one scan; a merge commit ends a batch and the walk resumes
  // from its first parent.
  Result<std::vector<CommitInfo>> log(const VersionId& from, std::uint32_t limit) {
    std::vector<CommitInfo> out;
    VersionId cursor = from;
    while (out.size() < limit) {
      auto scan = session_.get_k_previous(
          commit_key_, cursor, static_cast<std::uint32_t>(limit - out.size()),
          /*resume=*/true);
      if (!scan) return {scan.code(), scan.message()};
      for (const NodeRecord& rec : scan->records) {
        auto info = parse_commit_record(rec);
        if (!info) return {info.code(), info.message()};
        out.push_back(std::move(*info));
      }
      if (scan->terminator != ScanTerminator::kHitMerge) break;
      if (scan->records.empty() || scan->records.back().parents.empty()) break;
      cursor = scan->records.back().parents[0];
    }
    return out;
  }

  Result<CommitInfo> read_commit(const VersionId& v) {
    auto rec = session_.get(commit_key_, v);
    if (!rec) return {rec.code(), rec.message()};
    return parse_commit_record(*rec);
  }

  // Three-way merge of two commits: per file, one-sided changes win; a path
  // changed on both sides is a conflict and nothing is written.
  Result<MergeOutcome> merge_commits(const VersionId& a, const VersionId& b,
                                     const std::string& message,
                                     const std::string& author,
                                     std::uint64_t timestamp) {
    if (same_version(a, b))
      return {ErrorCode::kEqualParents, "merging a commit with itself"};
    auto ca = read_commit(a);
    if (!ca) return {ca.code(), ca.message()};
    auto cb = read_commit(b);
    if (!cb) return {cb.code(), cb.message()};
    auto base = session_.lowest_common_ancestor(commit_key_, a, b);
    if (!base) return {base.code(), base.message()};

    std::map<std::string, VersionId> fa, fb, fbase;
    if (auto r = flatten(ca->tree, "", fa); !r) return {r.code(), r.message()};
    if (auto r = flatten(cb->tree, "", fb); !r) return {r.code(), r.message()};
    if (!base->is_root()) {
      auto cbase = read_commit(*base);
      if (!cbase) return {cbase.code(), cbase.message()};
      if (auto r = flatten(cbase->tree, "", fbase); !r) return {r.code(), r.message()};
    }

    std::set<std::string> paths;
    for (const auto& [p, v] : fa) paths.insert(p);
    for (const auto& [p, v] : fb) paths.insert(p);
    for (const auto& [p, v] : fbase) paths.insert(p);

    auto digest_of = [](const std::map<std::string, VersionId>& m,
                        const std::string& p) -> std::optional<Digest> {
      auto it = m.find(p);
      if (it == m.end()) return std::nullopt;
      return it->second.h;
    };

    MergeOutcome outcome;
    std::map<std::string, VersionId> merged;
    for (const std::string& p : paths) {
      auto da = digest_of(fa, p);
      auto db = digest_of(fb, p);
      auto dz = digest_of(fbase, p);
      if (da == db) {
        if (da) merged[p] = fa[p];
      } else if (da == dz) {
        if (db) merged[p] = fb[p];  // only b changed (or deleted)
      } else if (db == dz) {
        if (da) merged[p] = fa[p];  // only a changed (or deleted)
      } else {
        outcome.conflicts.push_back(p);
      }
    }
    if (!outcome.conflicts.empty()) return outcome;

    DirNode root;
    for (const auto& [p, v] : merged) insert_path(root, p, v);
    auto tree = write_dir_node(root);
    if (!tree) return {tree.code(), tree.message()};

    std::string body;
    put_lp(body, message);
    put_lp(body, author);
    put_u64be(body, timestamp);
    encode_version(body, *tree);
    auto commit = session_.merge(commit_key_, a, b, body);
    if (!commit) return {commit.code(), commit.message()};
    outcome.commit = *commit;
    return outcome;
  }

  // Content-addressed tag object naming one commit.
  Result<VersionId> tag(const std::string& name, const VersionId& commit) {
    std::string body;
    put_lp(body, name);
    encode_version(body, commit);
    return put_object(tag_key_, body);
  }

  // ---------------------------------------------------------- object codecs

  static Bytes encode_tree(std::vector<TreeEntry> entries) {
    std::sort(entries.begin(), entries.end(),
              [](const TreeEntry& x, const TreeEntry& y) { return x.name < y.name; });
    std::string out;
    put_u32be(out, static_cast<std::uint32_t>(entries.size()));
    for (const TreeEntry& e : entries) {
      put_lp(out, e.name);
      out.push_back(static_cast<char>(e.kind));
      encode_version(out, e.version);
    }
    return out;
  }

  static Result<std::vector<TreeEntry>> decode_tree(const Bytes& body) {
    try {
      ByteReader in(body);
      std::uint32_t count = in.read_u32();
      std::vector<TreeEntry> entries;
      entries.reserve(count);
      for (std::uint32_t i = 0; i < count; ++i) {
        TreeEntry e;
        e.name = std::string(in.read_lp());
        e.kind = static_cast<EntryKind>(in.read_u8());
        e.version = decode_version(in);
        entries.push_back(std::move(e));
      }
      if (!in.done()) return {ErrorCode::kBadRequest, "trailing bytes in tree object"};
      return entries;
    } catch (const std::out_of_range&) {
      return {ErrorCode::kBadRequest, "malformed tree object"};
    }
  }

 private:
  struct DirNode {
    std::map<std::string, DirNode> dirs;
    std::map<std::string, VersionId> files;
  };

  // Content-addressed write: the version is derivable up front, so probe
  // first and upload only when the object is genuinely new. no_spill pins
  // the canonical placement, keeping future probes valid.
  Result<VersionId> put_object(const std::string& key, std::string_view body) {
    VersionId expect = derive_put_version(key, root_version(), body, "");
    auto probe = session_.get(key, expect);
    if (probe) return expect;
    if (probe.code() != ErrorCode::kNotFoundEverywhere)
      return {probe.code(), probe.message()};
    PutOptions opt;
    opt.no_spill = true;
    return session_.put(key, root_version(), body, opt);
  }

  Result<VersionId> write_tree(const std::filesystem::path& dir) {
    std::vector<std::filesystem::directory_entry> items;
    std::error_code ec;
    for (std::filesystem::directory_iterator it(dir, ec), end; !ec && it != end;
         it.increment(ec))
      items.push_back(*it);
    if (ec) return {ErrorCode::kIOFailure, "cannot list " + dir.string()};

    std::vector<TreeEntry> entries;
    for (const auto& item : items) {
      TreeEntry e;
      e.name = item.path().filename().string();
      if (item.is_directory()) {
        auto sub = write_tree(item.path());
        if (!sub) return sub;
        e.kind = EntryKind::kTree;
        e.version = *sub;
      } else if (item.is_regular_file()) {
        auto bytes = read_file(item.path());
        if (!bytes) return {bytes.code(), bytes.message()};
        auto blob = put_object(blob_key_, *bytes);
        if (!blob) return blob;
        e.kind = EntryKind::kBlob;
        e.version = *blob;
      } else {
        return {ErrorCode::kIOFailure,
                "unsupported directory entry: " + item.path().string()};
      }
      entries.push_back(std::move(e));
    }
    return put_object(tree_key_, encode_tree(std::move(entries)));
  }

  VoidResult materialize_tree(const VersionId& tree_v,
                              const std::filesystem::path& dir,
                              std::unordered_map<Digest, Bytes, DigestHash>& blob_cache,
                              std::size_t& files) {
    auto body = session_.get_value(tree_key_, tree_v);
    if (!body) return {body.code(), body.message()};
    auto entries = decode_tree(*body);
    if (!entries) return {entries.code(), entries.message()};
    for (const TreeEntry& e : *entries) {
      std::filesystem::path target = dir / e.name;
      if (e.kind == EntryKind::kTree) {
        std::error_code ec;
        std::filesystem::create_directory(target, ec);
        if (ec) return {ErrorCode::kIOFailure, "cannot create " + target.string()};
        auto sub = materialize_tree(e.version, target, blob_cache, files);
        if (!sub) return sub;
        continue;
      }
      auto cached = blob_cache.find(e.version.h);
      if (cached == blob_cache.end()) {
        auto bytes = session_.get_value(blob_key_, e.version);
        if (!bytes) return {bytes.code(), bytes.message()};
        cached = blob_cache.emplace(e.version.h, std::move(*bytes)).first;
      }
      auto res = write_file(target, cached->second);
      if (!res) return res;
      ++files;
    }
    return ok_void();
  }

  VoidResult flatten(const VersionId& tree_v, const std::string& prefix,
                     std::map<std::string, VersionId>& out) {
    auto body = session_.get_value(tree_key_, tree_v);
    if (!body) return {body.code(), body.message()};
    auto entries = decode_tree(*body);
    if (!entries) return {entries.code(), entries.message()};
    for (const TreeEntry& e : *entries) {
      std::string path = prefix.empty() ? e.name : prefix + "/" + e.name;
      if (e.kind == EntryKind::kTree) {
        auto sub = flatten(e.version, path, out);
        if (!sub) return sub;
      } else {
        out[path] = e.version;
      }
    }
    return ok_void();
  }

  static void insert_path(DirNode& node, std::string_view path, const VersionId& v) {
    auto slash = path.find('/');
    if (slash == std::string_view::npos) {
      node.files[std::string(path)] = v;
      return;
    }
    insert_path(node.dirs[std::string(path.substr(0, slash))], path.substr(slash + 1),
                v);
  }

  Result<VersionId> write_dir_node(const DirNode& node) {
    std::vector<TreeEntry> entries;
    for (const auto& [name, v] : node.files)
      entries.push_back({name, EntryKind::kBlob, v});
    for (const auto& [name, child] : node.dirs) {
      auto sub = write_dir_node(child);
      if (!sub) return sub;
      entries.push_back({name, EntryKind::kTree, *sub});
    }
    return put_object(tree_key_, encode_tree(std::move(entries)));
  }

  Result<CommitInfo> parse_commit_record(const NodeRecord& rec) {
    try {
      ByteReader in(rec.payload.bytes);
      CommitInfo info;
      info.version = rec.version;
      info.parents = rec.parents;
      info.message = std::string(in.read_lp());
      info.author = std::string(in.read_lp());
      info.timestamp = in.read_u64();
      info.tree = decode_version(in);
      if (!in.done())
        return {ErrorCode::kBadRequest, "trailing bytes in commit object"};
      return info;
    } catch (const std::out_of_range&) {
      return {ErrorCode::kBadRequest, "malformed commit object"};
    }
  }

  static Result<Bytes> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return {ErrorCode::kIOFailure, "cannot read " + p.string()};
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) return {ErrorCode::kIOFailure, "read failed: " + p.string()};
    return ss.str();
  }

  static VoidResult write_file(const std::filesystem::path& p, const Bytes& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) return {ErrorCode::kIOFailure, "cannot write " + p.string()};
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) return {ErrorCode::kIOFailure, "write failed: " + p.string()};
    return ok_void();
  }

  ClientSession& session_;
  std::string blob_key_;
  std::string tree_key_;
  std::string commit_key_;
  std::string tag_key_;
};

}  // namespace vstore
