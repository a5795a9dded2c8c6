#include "crowdmf/core_model.hpp"

#include <algorithm>
#include <utility>

#include <fmt/format.h>

namespace crowdmf {

namespace {

std::unordered_map<std::string, Index> build_lookup(const std::vector<std::string>& ids,
                                                    const char* what) {
  std::unordered_map<std::string, Index> lookup;
  lookup.reserve(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (!lookup.emplace(ids[k], static_cast<Index>(k)).second)
      throw ContractViolation(fmt::format("ObservationSet: duplicate {} id '{}'", what, ids[k]));
  }
  return lookup;
}

std::uint64_t pair_key(Index u, Index n) {
  return (static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint64_t>(n);
}

}  // namespace

std::string_view to_string(NoteStatus status) noexcept {
  switch (status) {
    case NoteStatus::Helpful:
      return "HELPFUL";
    case NoteStatus::NotHelpful:
      return "NOT_HELPFUL";
    case NoteStatus::NeedsMoreRatings:
      return "NEEDS_MORE_RATINGS";
  }
  return "UNKNOWN";
}

ObservationSet::ObservationSet(std::vector<std::string> user_ids,
                               std::vector<std::string> note_ids,
                               std::vector<Observation> entries)
    : user_ids_(std::move(user_ids)), note_ids_(std::move(note_ids)), entries_(std::move(entries)) {
  user_lookup_ = build_lookup(user_ids_, "rater");
  note_lookup_ = build_lookup(note_ids_, "note");

  const Index users = num_users();
  const Index notes = num_notes();
  std::vector<bool> user_seen(users, false), note_seen(notes, false);
  std::unordered_map<std::uint64_t, char> pairs;
  pairs.reserve(entries_.size());
  for (const auto& e : entries_) {
    if (e.user < 0 || e.user >= users || e.note < 0 || e.note >= notes)
      throw ContractViolation("ObservationSet: entry index out of range");
    if (!pairs.emplace(pair_key(e.user, e.note), 0).second)
      throw ContractViolation(fmt::format("ObservationSet: duplicate pair ({}, {})",
                                          user_ids_[e.user], note_ids_[e.note]));
    user_seen[e.user] = true;
    note_seen[e.note] = true;
  }
  for (Index u = 0; u < users; ++u)
    if (!user_seen[u])
      throw ContractViolation(fmt::format("ObservationSet: rater '{}' has no entries", user_ids_[u]));
  for (Index n = 0; n < notes; ++n)
    if (!note_seen[n])
      throw ContractViolation(fmt::format("ObservationSet: note '{}' has no entries", note_ids_[n]));
}

ObservationSet ObservationSet::from_events(std::span<const RatingEvent> events,
                                           DuplicatePolicy policy) {
  std::vector<std::string> user_ids, note_ids;
  std::unordered_map<std::string, Index> users, notes;
  std::vector<Observation> entries;
  std::vector<std::int64_t> stamps;
  std::unordered_map<std::uint64_t, std::size_t> slot;

  for (const auto& ev : events) {
    auto [uit, unew] = users.emplace(ev.rater_id, static_cast<Index>(user_ids.size()));
    if (unew) user_ids.push_back(ev.rater_id);
    auto [nit, nnew] = notes.emplace(ev.note_id, static_cast<Index>(note_ids.size()));
    if (nnew) note_ids.push_back(ev.note_id);

    const Index u = uit->second;
    const Index n = nit->second;
    auto [sit, fresh] = slot.emplace(pair_key(u, n), entries.size());
    if (fresh) {
      entries.push_back({u, n, ev.rating});
      stamps.push_back(ev.created_at_ms);
      continue;
    }
    switch (policy) {
      case DuplicatePolicy::Reject:
        throw DataError(fmt::format("duplicate rating of note '{}' by rater '{}'", ev.note_id,
                                    ev.rater_id));
      case DuplicatePolicy::KeepFirst:
        break;
      case DuplicatePolicy::KeepLatest:
        if (ev.created_at_ms >= stamps[sit->second]) {
          entries[sit->second].rating = ev.rating;
          stamps[sit->second] = ev.created_at_ms;
        }
        break;
    }
  }
  return ObservationSet(std::move(user_ids), std::move(note_ids), std::move(entries));
}

Index ObservationSet::find_user(std::string_view id) const {
  auto it = user_lookup_.find(std::string(id));
  return it == user_lookup_.end() ? -1 : it->second;
}

Index ObservationSet::find_note(std::string_view id) const {
  auto it = note_lookup_.find(std::string(id));
  return it == note_lookup_.end() ? -1 : it->second;
}

ObservationSet ObservationSet::restrict(const std::vector<bool>& keep_user,
                                        const std::vector<bool>& keep_note) const {
  require(static_cast<Index>(keep_user.size()) == num_users() &&
              static_cast<Index>(keep_note.size()) == num_notes(),
          "ObservationSet::restrict: mask length mismatch");
  std::vector<bool> user_used(num_users(), false), note_used(num_notes(), false);
  for (const auto& e : entries_) {
    if (keep_user[e.user] && keep_note[e.note]) {
      user_used[e.user] = true;
      note_used[e.note] = true;
    }
  }
  std::vector<Index> user_map(num_users(), -1), note_map(num_notes(), -1);
  std::vector<std::string> users, notes;
  for (Index u = 0; u < num_users(); ++u) {
    if (!user_used[u]) continue;
    user_map[u] = static_cast<Index>(users.size());
    users.push_back(user_ids_[u]);
  }
  for (Index n = 0; n < num_notes(); ++n) {
    if (!note_used[n]) continue;
    note_map[n] = static_cast<Index>(notes.size());
    notes.push_back(note_ids_[n]);
  }
  std::vector<Observation> kept;
  kept.reserve(entries_.size());
  for (const auto& e : entries_)
    if (keep_user[e.user] && keep_note[e.note])
      kept.push_back({user_map[e.user], note_map[e.note], e.rating});
  return ObservationSet(std::move(users), std::move(notes), std::move(kept));
}

}  // namespace crowdmf
