#include "smartshards/payload.hpp"

namespace smartshards {

namespace {
struct DigestVisitor {
  Digest operator()(const Transaction& t) const {
    return hash_combine(fnv1a("tx"), t.digest());
  }
  Digest operator()(const VerdictItem& v) const {
    return hash_combine(fnv1a("verdict"), v.tx.digest());
  }
  Digest operator()(const JoinItem& j) const {
    Digest h = fnv1a("join");
    h = hash_combine(h, static_cast<uint64_t>(j.peer));
    h = hash_combine(h, static_cast<uint64_t>(j.shard));
    h = hash_combine(h, static_cast<uint64_t>(j.other_shard));
    return h;
  }
  Digest operator()(const LeaveItem& l) const {
    Digest h = fnv1a("leave");
    h = hash_combine(h, static_cast<uint64_t>(l.peer));
    h = hash_combine(h, static_cast<uint64_t>(l.shard));
    return h;
  }
  Digest operator()(const MultiSpendItem& m) const {
    Digest h = fnv1a("multi");
    h = hash_combine(h, static_cast<uint64_t>(m.client));
    h = hash_combine(h, m.multi_id);
    for (UtxoId in : m.inputs) h = hash_combine(h, static_cast<uint64_t>(in));
    for (const auto& out : m.outputs) {
      h = hash_combine(h, static_cast<uint64_t>(out.recipient));
      h = hash_combine(h, static_cast<uint64_t>(out.shard));
      h = hash_combine(h, static_cast<uint64_t>(out.wallet));
    }
    return h;
  }
  Digest operator()(const NoOpItem&) const { return fnv1a("noop"); }
};
}  // namespace

Digest item_digest(const PayloadItem& item) {
  return std::visit(DigestVisitor{}, item);
}

Digest Payload::digest() const {
  Digest h = fnv1a("payload");
  for (const auto& item : items) h = hash_combine(h, item_digest(item));
  return h;
}

const Transaction* Payload::verdict_tx() const {
  if (items.size() != 1) return nullptr;
  const auto* v = std::get_if<VerdictItem>(&items[0]);
  return v ? &v->tx : nullptr;
}

}  // namespace smartshards
