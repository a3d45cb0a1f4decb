#ifndef DBGCHAT_H
#define DBGCHAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum DbgchatStatus {
  DBGCHAT_STATUS_OK = 0,
  DBGCHAT_STATUS_NULL_ARGUMENT = 1,
  DBGCHAT_STATUS_INVALID_UTF8 = 2,
  DBGCHAT_STATUS_INVALID_ARGUMENT = 3,
  DBGCHAT_STATUS_NOT_FOUND = 4,
  DBGCHAT_STATUS_SESSION_CLOSED = 5,
  DBGCHAT_STATUS_ILLEGAL_TRANSITION = 6,
  DBGCHAT_STATUS_BACKEND = 7,
  DBGCHAT_STATUS_IO = 8,
  DBGCHAT_STATUS_INTERNAL = 9,
  DBGCHAT_STATUS_PANIC = 10,
} DbgchatStatus;

// Opaque engine handle.
typedef struct DbgchatEngine DbgchatEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Create an engine with the bundled scenarios. `sessions_dir` may be null;
// when set, every session is persisted there as JSON Lines.
//
// # Safety
// `sessions_dir` must be null or a valid NUL-terminated string. `out` must be
// a valid pointer.
enum DbgchatStatus dbgchat_engine_new(const char *sessions_dir, struct DbgchatEngine **out);

// Release an engine. Null is ignored.
//
// # Safety
// `engine` must come from [`dbgchat_engine_new`] and not be used afterwards.
void dbgchat_engine_free(struct DbgchatEngine *engine);

// Start a session. `config_json` is a session config object such as
// `{"scenario_id":"task1"}`, or null for a session without a scenario.
// The new session id is written to `out_session_id`.
//
// # Safety
// Pointers must be valid; `config_json` may be null.
enum DbgchatStatus dbgchat_session_create(const struct DbgchatEngine *engine,
                                          const char *config_json,
                                          char **out_session_id);

// Send a developer message, given as JSON (`{"text":"...","origin":"Typed"}`).
// The outcome, including the assistant response and state view, is written
// to `out_json`.
//
// # Safety
// Pointers must be valid.
enum DbgchatStatus dbgchat_session_send(const struct DbgchatEngine *engine,
                                        const char *session_id,
                                        const char *message_json,
                                        char **out_json);

// Current state view of a session as JSON.
//
// # Safety
// Pointers must be valid.
enum DbgchatStatus dbgchat_session_view(const struct DbgchatEngine *engine,
                                        const char *session_id,
                                        char **out_json);

// Bundled scenarios as a JSON array of `{id, title, exception}`.
//
// # Safety
// Pointers must be valid.
enum DbgchatStatus dbgchat_scenarios_json(const struct DbgchatEngine *engine, char **out_json);

// Summarize a scenario's captured debug context within `budget` characters.
//
// # Safety
// Pointers must be valid.
enum DbgchatStatus dbgchat_summarize(const struct DbgchatEngine *engine,
                                     const char *scenario_id,
                                     size_t budget,
                                     char **out_text);

// Run the scripted evaluation with the cooperative persona and write the
// aggregated CSV report to `out_csv`. `scenarios` and `modes` are
// comma-separated; `scenarios` may be `all`. Seeds run from 1 to `seeds`.
//
// # Safety
// Pointers must be valid.
enum DbgchatStatus dbgchat_eval_csv(const struct DbgchatEngine *engine,
                                    const char *scenarios,
                                    const char *modes,
                                    uint64_t seeds,
                                    char **out_csv);

// Message for the last failure on this thread, or null after a success.
// The pointer stays valid until the next dbgchat call on the same thread.
const char *dbgchat_last_error_message(void);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void dbgchat_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DBGCHAT_H */
