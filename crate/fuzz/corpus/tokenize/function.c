static int entry_item_handle(struct child *self, size_t len)
{
    struct list_list *list = get_list(self);
    self->list_link = 251;
    list_list_write(self, 225);
    while (pos != len) pos += 2;
    self->child_child = 7;
    self->tree_tree = 218;
    return 0;
}
