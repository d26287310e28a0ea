#ifndef SPLITWIRE_H
#define SPLITWIRE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define SW_API __declspec(dllexport)
#else
#define SW_API __attribute__((visibility("default")))
#endif

typedef struct sw_config sw_config;
typedef struct sw_report sw_report;

typedef enum sw_status {
  SW_OK = 0,
  SW_ERR_INVALID_ARGUMENT = 1, /* null handle, unknown format name, ... */
  SW_ERR_CONFIG = 2,
  SW_ERR_VALIDATION = 3, /* dataset or shape checks */
  SW_ERR_IO = 4,
  SW_ERR_PARSE = 5,
  SW_ERR_DECODE = 6,
  SW_ERR_PROTOCOL = 7,
  SW_ERR_TRANSPORT = 8,
  SW_ERR_TIMEOUT = 9,
  SW_ERR_HANDSHAKE = 10,
  SW_ERR_VERIFY = 11,
  SW_ERR_INTERNAL = 12
} sw_status;

/* Message of the most recent failing call on this thread ("" if none). */
SW_API const char* sw_last_error(void);
SW_API const char* sw_status_name(sw_status status);
/* Strings returned through char** out-parameters are owned by the caller. */
SW_API void sw_string_free(char* s);
/* "trace", "debug", "info", "warn", "error" or "off". */
SW_API sw_status sw_set_log_level(const char* level);
SW_API const char* sw_version(void);

SW_API sw_status sw_config_new(sw_config** out);
SW_API sw_status sw_config_load(const char* path, sw_config** out);
SW_API sw_status sw_config_parse(const char* text, sw_config** out);
SW_API sw_status sw_config_set(sw_config* cfg, const char* key, const char* value);
SW_API sw_status sw_config_get(const sw_config* cfg, const char* key, char** out);
SW_API sw_status sw_config_canonical(const sw_config* cfg, int experiment_only, char** out);
SW_API sw_status sw_config_hash(const sw_config* cfg, uint64_t* out);
SW_API sw_status sw_config_validate(const sw_config* cfg);
SW_API void sw_config_free(sw_config* cfg);

/*
 * Run entry points. When the run itself starts but aborts part way, *out still
 * receives the partial report (flagged incomplete) and the return value names
 * the failure. On any other error *out is left NULL.
 */
SW_API sw_status sw_train(const sw_config* cfg, sw_report** out);
/* port_file, if non-NULL, receives the bound port once the listener is up. */
SW_API sw_status sw_serve(const sw_config* cfg, const char* listen, const char* port_file, sw_report** out);
/* protocol_version 0 means the current version. */
SW_API sw_status sw_client(const sw_config* cfg, const char* connect, uint8_t protocol_version, sw_report** out);

/* report.<format> plus whichever parameter blobs the report's side owns. */
SW_API sw_status sw_report_write(const sw_report* report, const char* dir, const char* format);
/* Loads a .csv or .json report; loaded reports carry no parameters. */
SW_API sw_status sw_report_load(const char* path, sw_report** out);
/* format: "csv", "json" or "summary". */
SW_API sw_status sw_report_render(const sw_report* report, const char* format, char** out);
SW_API int sw_report_is_complete(const sw_report* report);
SW_API void sw_report_free(sw_report* report);

/* Comparison table over n >= 2 reports; names label the rows. */
SW_API sw_status sw_compare(const sw_report* const* reports, const char* const* names, size_t n, char** out);

/*
 * Runs a verification suite ("grad", "split-equiv", "decoupling", "bytes" or
 * "all"). *out gets one line per check. Returns SW_ERR_VERIFY if any check
 * failed.
 */
SW_API sw_status sw_verify(const char* suite, char** out);

#ifdef __cplusplus
}
#endif

#endif
