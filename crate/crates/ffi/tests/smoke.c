#include <stdio.h>
#include <string.h>
#include "techseg.h"

int main(void) {
    const char *answers =
        "{\"id\":\"a\",\"text\":\"disk full error\"}\n"
        "{\"id\":\"b\",\"text\":\"reboot now\"}\n";
    TsIndex *index = NULL;
    if (ts_index_build(answers, &index) != TS_STATUS_OK) return 1;
    char *hits = NULL;
    if (ts_index_search(index, NULL, "disk error", NULL, 1, &hits) != TS_STATUS_OK) return 2;
    int ok = strstr(hits, "\"id\":\"a\"") != NULL;
    ts_string_free(hits);
    ts_index_free(index);
    if (ts_model_load("/missing", NULL) != TS_STATUS_NULL_ARGUMENT) return 3;
    if (strlen(ts_last_error()) == 0) return 4;
    printf("%s\n", ok ? "ok" : "wrong");
    return ok ? 0 : 5;
}
